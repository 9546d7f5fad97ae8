//! Command-line front end.
//!
//! Every subcommand reads a configuration (the built-in defaults when
//! `--config` is absent), writes its CSV and JSON files under
//! `<out>/<subcommand>/<config-hash>/` and prints a one-line summary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::heterodyne_dsp::{self as dsp, Calibration, Detrend, NoiseLevels, TraceMeta, Window};
use crate::noise_budget::{
    antenna_gain, combine, pattern_integral_monte_carlo, Components, NoiseBudget, OperatingPoint,
};
use crate::quantities::{from_nv_per_cm, load_config, to_nv_per_cm, ExperimentConfig, TWO_PI};
use crate::{spectra, sweep};

/// Environment variable read when `--workers` is not given.
pub const WORKERS_ENV: &str = "RYDBERG_SENSOR_WORKERS";

const NEF_UNIT: &str = "nV cm^-1 Hz^-1/2";

#[derive(Debug, Parser)]
#[command(name = "rydberg-sensor", version, about = "Cold-atom Rydberg microwave electrometer model")]
struct Cli {
    /// JSON configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root of the output tree.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (falls back to RYDBERG_SENSOR_WORKERS, then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Noise budget at the configured operating point.
    Budget(BudgetArgs),
    /// Probe transmission spectrum.
    Spectrum(SpectrumArgs),
    /// Fit a spectrum or a response curve.
    Fit(FitArgs),
    /// Effective antenna gain of the atomic medium.
    Gain(GainArgs),
    /// Budget against probe power over the N(P) table.
    SweepPower(SweepPowerArgs),
    /// Budget against atom number at fixed probe power.
    SweepAtoms(SweepAtomsArgs),
    /// S/NEF_at over temperature and optical depth.
    Map(MapArgs),
    /// Synthesize a heterodyne photovoltage trace.
    DspSynth(SynthArgs),
    /// Spectral analysis of a trace.
    DspAnalyze(AnalyzeArgs),
    /// Minimum detectable field against integration time.
    Emin(EminArgs),
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Override NEF_at, nV cm^-1 Hz^-1/2.
    #[arg(long)]
    nef_at: Option<f64>,
    #[arg(long)]
    nef_ph: Option<f64>,
    #[arg(long)]
    nef_pd: Option<f64>,
    #[arg(long)]
    nef_ex: Option<f64>,
    /// Correlation coefficient between atom and photon shot noise.
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    /// Inject the published component values and correlation.
    #[arg(long)]
    measured_components: bool,
    /// Maximize the slope over Ω_L before evaluating.
    #[arg(long)]
    optimize_omega_l: bool,
}

#[derive(Debug, Args)]
struct SpectrumArgs {
    #[arg(long, default_value_t = -10.0, allow_hyphen_values = true)]
    from_mhz: f64,
    #[arg(long, default_value_t = 10.0, allow_hyphen_values = true)]
    to_mhz: f64,
    #[arg(long, default_value_t = 201)]
    points: usize,
    /// Leave the local microwave off (plain EIT).
    #[arg(long)]
    no_mw: bool,
    /// Drop interaction shifts and dephasing.
    #[arg(long)]
    no_interactions: bool,
    /// Ramp the optical depth along the scan.
    #[arg(long)]
    od_ramp: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitModel {
    Dephasing,
    Lorentzian,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Two-column CSV (detuning in Hz, value).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "dephasing")]
    model: FitModel,
    /// Starting γ₃/2π in MHz (dephasing fits).
    #[arg(long)]
    gamma3_mhz: Option<f64>,
    #[arg(long)]
    gamma4_mhz: Option<f64>,
}

#[derive(Debug, Args)]
struct GainArgs {
    /// Medium length, m.
    #[arg(long = "L")]
    length: Option<f64>,
    /// Microwave wavelength, m.
    #[arg(long)]
    lambda: Option<f64>,
    /// Phase mismatch β.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Also run a Monte Carlo check with this many samples.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SweepPowerArgs {
    /// Probe powers in μW; the N(P) table points when omitted.
    #[arg(long, value_delimiter = ',')]
    powers_uw: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct SweepAtomsArgs {
    #[arg(long, default_value_t = 1e4)]
    from: f64,
    #[arg(long, default_value_t = 5.2e5)]
    to: f64,
    #[arg(long, default_value_t = 12)]
    points: usize,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
}

#[derive(Debug, Args)]
struct MapArgs {
    /// Atomic temperatures, K.
    #[arg(long, value_delimiter = ',', default_values_t = vec![2e-4, 2e-3, 2e-2])]
    temps_k: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.33, 1.0, 3.0, 10.0, 30.0])]
    ods: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    /// Also compute NEF_ph curves at the published Doppler widths.
    #[arg(long)]
    psn_curves: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TraceFormat {
    Csv,
    Binary,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Calibration field amplitude, V/m.
    #[arg(long, default_value_t = 1e-3)]
    e_cal: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    phi0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noise-free trace.
    #[arg(long)]
    no_noise: bool,
    /// Detector noise only, no photon shot noise.
    #[arg(long)]
    no_shot: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: TraceFormat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DetrendArg {
    None,
    Mean,
    Linear,
    Quadratic,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Trace as CSV (t_s, volts) or raw f64 samples (needs --rate).
    #[arg(long)]
    input: PathBuf,
    /// Sample rate for binary input, Hz.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value = "rectangular")]
    window: String,
    #[arg(long, value_enum, default_value = "quadratic")]
    detrend: DetrendArg,
    /// NEV for the amplitude calibration, V/√Hz; analytic scaling when omitted.
    #[arg(long)]
    nev_calib: Option<f64>,
    /// Responsivity, V per (V/m); the model value when omitted.
    #[arg(long)]
    r_h: Option<f64>,
}

#[derive(Debug, Args)]
struct EminArgs {
    /// Sensitivity in nV cm^-1 Hz^-1/2; the model budget when omitted.
    #[arg(long)]
    s_nv: Option<f64>,
    /// Integration time, s.
    #[arg(long, default_value_t = 420.0)]
    t_prime: f64,
    /// Also average synthesized noise traces.
    #[arg(long)]
    empirical: bool,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 10, 100, 1000, 10000])]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 2 for input errors, 3 for numerical
/// failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn worker_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return if n > 0 { Ok(Some(n)) } else { Err(Error::Parameter("--workers must be positive".into())) };
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Parameter(format!("{WORKERS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(None),
    }
}

fn execute(cli: &Cli) -> Result<String> {
    let config = match &cli.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::reference(),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = worker_count(cli.workers)? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(cli, &config))
}

struct Output {
    dir: PathBuf,
    hash: String,
    subcommand: &'static str,
}

impl Output {
    fn new(root: &Path, subcommand: &'static str, config: &ExperimentConfig) -> Result<Self> {
        let hash = config.hash();
        let dir = root.join(subcommand).join(&hash);
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, hash, subcommand })
    }

    fn text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        Ok(path)
    }

    /// Writes `result` wrapped with provenance fields.
    fn json(&self, name: &str, seed: Option<u64>, result: Value) -> Result<PathBuf> {
        let doc = json!({
            "subcommand": self.subcommand,
            "config_hash": self.hash,
            "seed": seed,
            "version": env!("CARGO_PKG_VERSION"),
            "result": result,
        });
        self.text(name, &(serde_json::to_string_pretty(&doc)? + "\n"))
    }

    /// Sidecar for a data file: `<name>.json` next to it.
    fn sidecar(&self, data: &str, seed: Option<u64>, meta: Value) -> Result<PathBuf> {
        self.json(&format!("{data}.json"), seed, meta)
    }
}

fn dispatch(cli: &Cli, config: &ExperimentConfig) -> Result<String> {
    match &cli.command {
        Command::Budget(a) => budget(cli, config, a),
        Command::Spectrum(a) => spectrum(cli, config, a),
        Command::Fit(a) => fit(cli, config, a),
        Command::Gain(a) => gain(cli, config, a),
        Command::SweepPower(a) => sweep_power(cli, config, a),
        Command::SweepAtoms(a) => sweep_atoms(cli, config, a),
        Command::Map(a) => map(cli, config, a),
        Command::DspSynth(a) => dsp_synth(cli, config, a),
        Command::DspAnalyze(a) => dsp_analyze(cli, config, a),
        Command::Emin(a) => emin(cli, config, a),
    }
}

fn nef(v_per_m: f64) -> Value {
    json!({ "value": to_nv_per_cm(v_per_m), "unit": NEF_UNIT })
}

/// Published component values, nV cm^-1 Hz^-1/2, and correlation.
const MEASURED_COMPONENTS: [f64; 4] = [3.70, 9.10, 3.00, 3.18];
const MEASURED_R: f64 = -0.78;

fn budget(cli: &Cli, config: &ExperimentConfig, a: &BudgetArgs) -> Result<String> {
    let mut cfg = config.clone();
    if a.optimize_omega_l {
        cfg.optimize_omega_l = true;
    }
    let base = if a.measured_components { Some(MEASURED_COMPONENTS) } else { None };
    let injected = [a.nef_at, a.nef_ph, a.nef_pd, a.nef_ex];
    let pick = |i: usize| injected[i].or(base.map(|b| b[i]));
    let all_injected = (0..4).all(|i| pick(i).is_some());
    let r_given = a.r.or(if a.measured_components { Some(MEASURED_R) } else { None });

    let point = if all_injected { None } else { Some(OperatingPoint::evaluate(&cfg)?) };
    let r = match r_given {
        Some(r) => r,
        None => sweep::resolve_correlation(&cfg)?,
    };
    let modelled = point.as_ref().map(|p| p.components);
    let value = |i: usize, model: Option<f64>| -> f64 {
        match pick(i) {
            Some(v) => from_nv_per_cm(v),
            None => model.expect("model evaluated when a component is missing"),
        }
    };
    let c = Components {
        nef_at: value(0, modelled.map(|m| m.nef_at)),
        nef_ph: value(1, modelled.map(|m| m.nef_ph)),
        nef_pd: value(2, modelled.map(|m| m.nef_pd)),
        nef_ex: value(3, modelled.map(|m| m.nef_ex)),
    };
    let total = combine(&c, r)?;
    let out = Output::new(&cli.out, "budget", &cfg)?;
    let names = ["nef_at", "nef_ph", "nef_pd", "nef_ex"];
    let injected_names: Vec<&str> = (0..4).filter(|&i| pick(i).is_some()).map(|i| names[i]).collect();
    let mut result = json!({
        "nef_at": nef(c.nef_at),
        "nef_ph": nef(c.nef_ph),
        "nef_pd": nef(c.nef_pd),
        "nef_ex": nef(c.nef_ex),
        "r": { "value": r, "unit": "dimensionless", "source": if r_given.is_some() { "injected" } else if cfg.correlation_r.is_some() { "config" } else { "probe-power sweep" } },
        "total": nef(total),
        "injected": injected_names,
    });
    if let Some(p) = &point {
        let b: NoiseBudget = p.budget(r)?;
        result["operating_point"] = json!({
            "omega_l": { "value": p.omega_l / TWO_PI, "unit": "Hz" },
            "transmission": { "value": p.transmission, "unit": "dimensionless" },
            "slope": { "value": p.slope, "unit": "per rad/s" },
            "r_h": { "value": p.r_h, "unit": "V per V/m" },
            "t2": { "value": b.t2, "unit": "s" },
            "gain": { "value": b.gain, "unit": "dimensionless" },
            "gamma_r": { "value": p.interactions.gamma_r / TWO_PI, "unit": "Hz" },
            "atoms": { "value": p.derived.big_n, "unit": "count" },
            "d_opt": { "value": p.derived.d_opt, "unit": "dimensionless" },
        });
    }
    let path = out.json("budget.json", None, result)?;
    Ok(format!(
        "budget: S = {:.2} {NEF_UNIT} (NEF_at {:.2}, NEF_ph {:.2}, NEF_pd {:.2}, NEF_ex {:.2}, r = {:.3}) -> {}",
        to_nv_per_cm(total),
        to_nv_per_cm(c.nef_at),
        to_nv_per_cm(c.nef_ph),
        to_nv_per_cm(c.nef_pd),
        to_nv_per_cm(c.nef_ex),
        r,
        path.display()
    ))
}

fn spectrum(cli: &Cli, config: &ExperimentConfig, a: &SpectrumArgs) -> Result<String> {
    if a.points < 2 || !(a.to_mhz > a.from_mhz) {
        return Err(Error::Parameter("need at least two points over an increasing range".into()));
    }
    let grid = spectra::linear_grid(TWO_PI * a.from_mhz * 1e6, TWO_PI * a.to_mhz * 1e6, a.points);
    let opts = spectra::SpectrumOptions { include_mw: !a.no_mw, interactions: !a.no_interactions, od_ramp: a.od_ramp };
    let s = spectra::eit_spectrum_with(config, &grid, opts)?;
    let out = Output::new(&cli.out, "spectrum", config)?;
    let path = out.text("spectrum.csv", &s.to_csv())?;
    let (imin, imax) = extremes(&s.values);
    out.sidecar(
        "spectrum.csv",
        None,
        json!({
            "columns": { "detuning_hz": "Hz", "value": "probe transmission" },
            "include_mw": opts.include_mw,
            "interactions": opts.interactions,
            "od_ramp": opts.od_ramp,
            "peak_separation_hz": s.peak_separation().map(|d| d / TWO_PI),
        }),
    )?;
    Ok(format!(
        "spectrum: {} points, T in [{:.4}, {:.4}] -> {}",
        s.values.len(),
        s.values[imin],
        s.values[imax],
        path.display()
    ))
}

fn extremes(v: &[f64]) -> (usize, usize) {
    let imin = v.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap_or(0);
    let imax = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|x| x.0).unwrap_or(0);
    (imin, imax)
}

fn fit(cli: &Cli, config: &ExperimentConfig, a: &FitArgs) -> Result<String> {
    let s = spectra::Spectrum::from_csv(&a.input)?;
    let out = Output::new(&cli.out, "fit", config)?;
    let (result, summary) = match a.model {
        FitModel::Dephasing => {
            let fixed = spectra::ChiFixed::from_config(config)?;
            let guess = match (a.gamma3_mhz, a.gamma4_mhz) {
                (Some(g3), Some(g4)) => Some((TWO_PI * g3 * 1e6, TWO_PI * g4 * 1e6)),
                (None, None) => None,
                _ => return Err(Error::Parameter("give both --gamma3-mhz and --gamma4-mhz or neither".into())),
            };
            let f = spectra::fit_dephasing(&s, &fixed, guess)?;
            let line = format!(
                "fit: gamma3/2pi = {:.4} MHz, gamma4/2pi = {:.4} MHz, rms {:.2e}",
                f.get("gamma3") / TWO_PI / 1e6,
                f.get("gamma4") / TWO_PI / 1e6,
                f.residual_rms
            );
            (f, line)
        }
        FitModel::Lorentzian => {
            let f = spectra::fit_lorentzian(&s)?;
            let line = format!(
                "fit: f_3dB = {:.4} MHz, FWHM/2pi = {:.4} MHz, rms {:.2e}",
                f.get("f_3db") / 1e6,
                f.get("fwhm") / TWO_PI / 1e6,
                f.residual_rms
            );
            (f, line)
        }
    };
    let path = out.json("fit.json", None, serde_json::to_value(&result)?)?;
    Ok(format!("{summary} -> {}", path.display()))
}

fn gain(cli: &Cli, config: &ExperimentConfig, a: &GainArgs) -> Result<String> {
    let l = a.length.unwrap_or(config.length_l);
    let lambda = a.lambda.unwrap_or(config.lambda_mw);
    let beta = a.beta.unwrap_or(config.beta);
    let g = antenna_gain(l, lambda, beta)?;
    let mut result = json!({
        "length_l": { "value": l, "unit": "m" },
        "lambda_mw": { "value": lambda, "unit": "m" },
        "beta": { "value": beta, "unit": "dimensionless" },
        "gain": { "value": g, "unit": "dimensionless" },
    });
    let mut seed = None;
    if let Some(n) = a.mc_samples {
        if n < 2 {
            return Err(Error::Parameter("--mc-samples needs at least two samples".into()));
        }
        let (integral, err) = pattern_integral_monte_carlo(l, lambda, beta, n, a.seed);
        let g_mc = 4.0 * std::f64::consts::PI / integral;
        result["monte_carlo"] = json!({
            "samples": n,
            "gain": g_mc,
            "gain_std_err": g_mc * err / integral,
        });
        seed = Some(a.seed);
    }
    let out = Output::new(&cli.out, "gain", config)?;
    let path = out.json("gain.json", seed, result)?;
    Ok(format!("gain: G = {g:.3} (L = {l} m, lambda = {lambda} m, beta = {beta}) -> {}", path.display()))
}

fn write_sweep(out: &Output, table: &sweep::SweepTable, extra: Value) -> Result<PathBuf> {
    let path = out.text("sweep.csv", &table.to_csv())?;
    let i = table.argmin();
    let mut meta = json!({
        "axis": { "name": table.axis_name, "unit": table.axis_unit },
        "field_unit": NEF_UNIT,
        "r": table.r,
        "argmin": { "index": i, "axis": table.rows[i].axis, "total": to_nv_per_cm(table.rows[i].budget.total) },
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    out.sidecar("sweep.csv", None, meta)?;
    Ok(path)
}

fn sweep_power(cli: &Cli, config: &ExperimentConfig, a: &SweepPowerArgs) -> Result<String> {
    let grid: Vec<f64> = match &a.powers_uw {
        Some(p) => p.iter().map(|v| v * 1e-6).collect(),
        None => config.n_vs_power.powers().to_vec(),
    };
    let table = sweep::sweep_probe_power(config, &grid)?;
    let out = Output::new(&cli.out, "sweep-power", config)?;
    let path = write_sweep(&out, &table, json!({}))?;
    let i = table.argmin();
    Ok(format!(
        "sweep-power: {} points, minimum S = {:.2} {NEF_UNIT} at {:.2} uW, r = {:.3} -> {}",
        table.rows.len(),
        to_nv_per_cm(table.rows[i].budget.total),
        table.rows[i].axis * 1e6,
        table.r,
        path.display()
    ))
}

fn sweep_atoms(cli: &Cli, config: &ExperimentConfig, a: &SweepAtomsArgs) -> Result<String> {
    if !(a.from > 0.0 && a.to > a.from) || a.points < 2 {
        return Err(Error::Parameter("need 0 < from < to and at least two points".into()));
    }
    let r = match a.r {
        Some(r) => r,
        None => sweep::resolve_correlation(config)?,
    };
    let grid = sweep::log_grid(a.from, a.to, a.points);
    let table = sweep::sweep_atom_number(config, &grid, r)?;
    let out = Output::new(&cli.out, "sweep-atoms", config)?;
    let path = write_sweep(&out, &table, json!({}))?;
    let last = table.rows.last().expect("nonempty grid");
    Ok(format!(
        "sweep-atoms: {} points, S = {:.2} {NEF_UNIT} at N = {:.3e} (floor NEF_ex {:.2}) -> {}",
        table.rows.len(),
        to_nv_per_cm(last.budget.total),
        last.axis,
        to_nv_per_cm(last.budget.nef_ex),
        path.display()
    ))
}

fn map(cli: &Cli, config: &ExperimentConfig, a: &MapArgs) -> Result<String> {
    let r = match a.r {
        Some(r) => r,
        None => sweep::resolve_correlation(config)?,
    };
    let m = sweep::map_temperature_od(config, &a.temps_k, &a.ods, r)?;
    let out = Output::new(&cli.out, "map", config)?;
    let mut csv = String::from("temperature_k,doppler_width_hz,d_opt,ratio,nef_ph,nef_at\n");
    for (i, t) in m.temperatures.iter().enumerate() {
        for (j, d) in m.optical_depths.iter().enumerate() {
            csv.push_str(&format!(
                "{t:e},{:e},{d:e},{:e},{:e},{:e}\n",
                m.doppler_widths[i] / TWO_PI,
                m.ratio[i][j],
                to_nv_per_cm(m.nef_ph[i][j]),
                to_nv_per_cm(m.nef_at[i][j])
            ));
        }
    }
    let path = out.text("map.csv", &csv)?;
    out.sidecar(
        "map.csv",
        None,
        json!({ "r": r, "field_unit": NEF_UNIT, "ratio": "S / NEF_at" }),
    )?;
    if a.psn_curves {
        let widths: Vec<f64> = sweep::PSN_CURVE_WIDTHS_HZ.iter().map(|w| TWO_PI * w).collect();
        let curves = sweep::psn_curves(config, &widths, &a.ods)?;
        let mut csv = String::from("doppler_width_hz,d_opt,nef_ph\n");
        for (w, row) in sweep::PSN_CURVE_WIDTHS_HZ.iter().zip(&curves) {
            for (d, v) in a.ods.iter().zip(row) {
                csv.push_str(&format!("{w:e},{d:e},{:e}\n", to_nv_per_cm(*v)));
            }
        }
        out.text("psn_curves.csv", &csv)?;
        out.sidecar("psn_curves.csv", None, json!({ "field_unit": NEF_UNIT }))?;
    }
    let (mut best, mut at) = (f64::INFINITY, (0, 0));
    for (i, row) in m.ratio.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if *v < best {
                best = *v;
                at = (i, j);
            }
        }
    }
    Ok(format!(
        "map: {}x{} cells, minimum S/NEF_at = {:.3} at T = {:.3e} K, D_opt = {} -> {}",
        m.temperatures.len(),
        m.optical_depths.len(),
        best,
        m.temperatures[at.0],
        m.optical_depths[at.1],
        path.display()
    ))
}

fn noise_for(config: &ExperimentConfig, no_noise: bool, no_shot: bool) -> NoiseLevels {
    if no_noise {
        NoiseLevels::NONE
    } else {
        NoiseLevels { nev: config.nev, shot: !no_shot }
    }
}

fn dsp_synth(cli: &Cli, config: &ExperimentConfig, a: &SynthArgs) -> Result<String> {
    let noise = noise_for(config, a.no_noise, a.no_shot);
    let trace = dsp::synthesize_trace(config, a.e_cal, config.delta_s, a.phi0, &noise, a.seed)?;
    let out = Output::new(&cli.out, "dsp-synth", config)?;
    let name = match a.format {
        TraceFormat::Csv => {
            out.text("trace.csv", &trace.to_csv())?;
            "trace.csv"
        }
        TraceFormat::Binary => {
            trace.write_binary(&out.dir.join("trace.f64"))?;
            "trace.f64"
        }
    };
    out.sidecar(
        name,
        Some(a.seed),
        json!({
            "sample_rate_hz": trace.sample_rate,
            "samples": trace.samples.len(),
            "units": { "t": "s", "samples": "V" },
            "format": if name.ends_with(".csv") { "csv" } else { "f64-le" },
            "meta": trace.meta,
            "noise": noise,
        }),
    )?;
    let mean = trace.samples.iter().sum::<f64>() / trace.samples.len() as f64;
    Ok(format!(
        "dsp-synth: {} samples at {:.3e} Hz, mean {:.4} V, e_cal = {:e} V/m, seed {} -> {}",
        trace.samples.len(),
        trace.sample_rate,
        mean,
        a.e_cal,
        a.seed,
        out.dir.join(name).display()
    ))
}

fn dsp_analyze(cli: &Cli, config: &ExperimentConfig, a: &AnalyzeArgs) -> Result<String> {
    let meta = TraceMeta {
        seed: 0,
        e_cal: f64::NAN,
        delta_s: config.delta_s,
        phi0: 0.0,
        window_ms: config.window_ms,
    };
    let is_csv = a.input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let trace = if is_csv {
        dsp::TimeTrace::from_csv(&a.input, meta)?
    } else {
        let rate = a.rate.ok_or_else(|| Error::Parameter("binary traces need --rate".into()))?;
        dsp::TimeTrace::read_binary(&a.input, rate, meta)?
    };
    let window: Window = a.window.parse()?;
    let detrend = match a.detrend {
        DetrendArg::None => Detrend::None,
        DetrendArg::Mean => Detrend::Mean,
        DetrendArg::Linear => Detrend::Linear,
        DetrendArg::Quadratic => Detrend::Quadratic,
    };
    let calibration = match a.nev_calib {
        Some(v) => Calibration::Nev(v),
        None => Calibration::Analytic,
    };
    let r_h = match a.r_h {
        Some(r) => r,
        None => OperatingPoint::evaluate(config)?.r_h,
    };
    let asd = dsp::spectral_density(&trace, window, detrend, calibration)?;
    let sens = dsp::sensitivity_spectrum(&asd, r_h)?;
    let f_if = config.delta_s / TWO_PI;
    let tone = dsp::tone_amplitude(&asd, f_if);
    let floor = sens.band_floor(10e3, 300e3);
    let out = Output::new(&cli.out, "dsp-analyze", config)?;
    out.text("asd.csv", &asd.to_csv())?;
    out.sidecar("asd.csv", None, json!({ "units": { "freq": "Hz", "asd": "V/sqrt(Hz)" }, "window": window, "window_correction": asd.window_correction }))?;
    out.text("sensitivity.csv", &sens.to_csv())?;
    out.sidecar("sensitivity.csv", None, json!({ "units": { "freq": "Hz", "field_asd": "V m^-1 Hz^-1/2" }, "r_h": r_h }))?;
    let path = out.json(
        "analysis.json",
        None,
        json!({
            "input": a.input.display().to_string(),
            "tone": { "frequency_hz": f_if, "amplitude_v": tone, "field_v_per_m": tone / r_h },
            "r_h": { "value": r_h, "unit": "V per V/m" },
            "floor_10_300_khz": nef(floor),
        }),
    )?;
    Ok(format!(
        "dsp-analyze: tone {:.3e} V at {:.1} kHz, 10-300 kHz floor {:.2} {NEF_UNIT} -> {}",
        tone,
        f_if / 1e3,
        to_nv_per_cm(floor),
        path.display()
    ))
}

#[derive(Serialize)]
struct EminRow {
    traces: usize,
    t_prime_s: f64,
    e_min_pv_per_cm: f64,
    analytic_pv_per_cm: f64,
}

fn emin(cli: &Cli, config: &ExperimentConfig, a: &EminArgs) -> Result<String> {
    let s = match a.s_nv {
        Some(v) => from_nv_per_cm(v),
        None => sweep::budget(config)?.1.total,
    };
    let e = dsp::min_detectable_field(s, a.t_prime)?;
    let pv = |v: f64| to_nv_per_cm(v) * 1e3;
    let out = Output::new(&cli.out, "emin", config)?;
    let mut result = json!({
        "s": nef(s),
        "t_prime": { "value": a.t_prime, "unit": "s" },
        "e_min": { "value": pv(e), "unit": "pV cm^-1" },
    });
    let mut seed = None;
    if a.empirical {
        let point = OperatingPoint::evaluate(config)?;
        let noise = NoiseLevels::from_config(config);
        let pts = dsp::empirical_emin(config, &noise, point.r_h, &a.counts, (10e3, 300e3), a.seed)?;
        let rows: Vec<EminRow> = pts
            .iter()
            .map(|p| {
                Ok(EminRow {
                    traces: p.traces,
                    t_prime_s: p.t_prime,
                    e_min_pv_per_cm: pv(p.e_min),
                    analytic_pv_per_cm: pv(dsp::min_detectable_field(s, p.t_prime)?),
                })
            })
            .collect::<Result<_>>()?;
        let mut csv = String::from("traces,t_prime_s,e_min_pv_per_cm,analytic_pv_per_cm\n");
        for r in &rows {
            csv.push_str(&format!("{},{:e},{:e},{:e}\n", r.traces, r.t_prime_s, r.e_min_pv_per_cm, r.analytic_pv_per_cm));
        }
        out.text("emin.csv", &csv)?;
        out.sidecar("emin.csv", Some(a.seed), json!({ "rep_rate_hz": dsp::REP_RATE_HZ, "band_hz": [10e3, 300e3] }))?;
        if pts.len() >= 2 {
            let x: Vec<f64> = pts.iter().map(|p| p.traces as f64).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.e_min).collect();
            let (_, p) = dsp::power_law_fit(&x, &y)?;
            result["empirical_exponent"] = json!(p);
        }
        seed = Some(a.seed);
    }
    let path = out.json("emin.json", seed, result)?;
    Ok(format!(
        "emin: E_min = {:.1} pV/cm for S = {:.2} {NEF_UNIT}, T' = {} s -> {}",
        pv(e),
        to_nv_per_cm(s),
        a.t_prime,
        path.display()
    ))
}
