//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion is evaluated and
//! reported even when an earlier one fails. The process exits nonzero if
//! any criterion fails.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use rydberg_sensor::bloch::{steady_state, time_evolve, DensityMatrix4, Drive, LevelShifts, Liouvillian, Rates};
use rydberg_sensor::doppler::CoherenceModel;
use rydberg_sensor::heterodyne_dsp::{
    self as dsp, Calibration, Detrend, NoiseLevels, TimeTrace, TraceMeta, Window,
};
use rydberg_sensor::interactions::{blockade_geometry, summarize};
use rydberg_sensor::noise_budget::{
    antenna_gain, coherence_time, combine, nef_at, nef_ex, nef_ph_formula, pattern_integral,
    pattern_integral_monte_carlo, thermal_dipole_limit, Components, OperatingPoint,
};
use rydberg_sensor::quantities::{derive, from_nv_per_cm, to_nv_per_cm, ExperimentConfig, CONSTANTS, TWO_PI};
use rydberg_sensor::spectra::{self, ChiFixed, ChiParams, Spectrum};
use rydberg_sensor::sweep;

// Tolerances, fixed here and nowhere else.
const BUDGET_TARGET: f64 = 7.94;
const BUDGET_ABS: f64 = 0.01;
const NEF_EX_TARGET: f64 = 3.2;
const NEF_EX_REL: f64 = 0.03;
const GAIN_TARGET: f64 = 11.5;
const GAIN_ABS: f64 = 0.2;
const SHORT_DIPOLE_GAIN: f64 = 1.5;
const SHORT_DIPOLE_ABS: f64 = 1e-3;
const MC_SIGMAS: f64 = 3.0;
const DIPOLE_LIMIT_TARGET: f64 = 5.9;
const DIPOLE_RATIO_TARGET: f64 = 1.7;
const MEASURED_S: f64 = 10.0;
const DIPOLE_REL: f64 = 0.05;
const GAMMA_R_TARGET_HZ: f64 = 3.0e6;
const GAMMA_R_REL: f64 = 0.35;
const N_B_TARGET: f64 = 0.01;
const N_B_FACTOR: f64 = 3.0;
const NEF_PH_TARGET: f64 = 9.1;
const NEF_PH_REL: f64 = 0.15;
const PSN_SCALING_REL: f64 = 1e-12;
const STEADY_VS_EVOLVE: f64 = 1e-8;
const TWO_LEVEL_ABS: f64 = 1e-10;
const QUADRATURE_ABS: f64 = 1e-8;
const COLD_LIMIT_ABS: f64 = 1e-12;
const SINE_REL: f64 = 0.005;
const NOISE_FLOOR_REL: f64 = 0.05;
const R_SQUARED_MIN: f64 = 0.999;
const EXPONENT_TARGET: f64 = -0.5;
const EXPONENT_ABS: f64 = 0.05;
const EMIN_ANALYTIC_PV: f64 = 488.0;
const EMIN_ABS_PV: f64 = 0.5;
const EMIN_MEASURED_PV: f64 = 540.0;
const FIT_CLEAN_REL: f64 = 0.01;
const FIT_NOISY_REL: f64 = 0.05;
const F3DB_TARGET: f64 = 2.3e6;
const T2_TARGET: f64 = 51e-9;
const T2_REL: f64 = 1e-3;
const NEF_AT_TARGET: f64 = 3.8;
const NEF_AT_REL: f64 = 0.10;
const MODEL_VS_MEASURED_FACTOR: f64 = 1.5;

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn check(ok: bool, msg: String, pass: &mut bool, notes: &mut Vec<String>) {
    *pass &= ok;
    notes.push(if ok { msg } else { format!("MISS {msg}") });
}

fn budget_arithmetic() -> Outcome {
    let c = Components {
        nef_at: from_nv_per_cm(3.70),
        nef_ph: from_nv_per_cm(9.10),
        nef_pd: from_nv_per_cm(3.00),
        nef_ex: from_nv_per_cm(3.18),
    };
    let s = to_nv_per_cm(combine(&c, -0.78).map_err(err)?);
    // Independent arithmetic oracle.
    let oracle = (3.70f64.powi(2) + 9.10f64.powi(2) + 3.00f64.powi(2) + 3.18f64.powi(2)
        + 2.0 * -0.78 * 3.70 * 9.10)
        .sqrt();
    let ok = (s - BUDGET_TARGET).abs() <= BUDGET_ABS && (s - oracle).abs() < 1e-12;
    Ok((ok, format!("S = {s:.4} (oracle {oracle:.4}, target {BUDGET_TARGET} ± {BUDGET_ABS})")))
}

fn blackbody_nef() -> Outcome {
    let v = to_nv_per_cm(nef_ex(36.9e9, 293.0, 11.5).map_err(err)?);
    let ok = (v - NEF_EX_TARGET).abs() <= NEF_EX_REL * NEF_EX_TARGET;
    Ok((ok, format!("NEF_ex = {v:.3} nV/cm/√Hz (target {NEF_EX_TARGET} ± {:.0}%)", NEF_EX_REL * 100.0)))
}

fn antenna() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let g = antenna_gain(0.02, 0.0081, 0.0).map_err(err)?;
    check((g - GAIN_TARGET).abs() <= GAIN_ABS, format!("G = {g:.3}"), &mut pass, &mut notes);
    let short = antenna_gain(1e-6, 0.0081, 0.0).map_err(err)?;
    check(
        (short - SHORT_DIPOLE_GAIN).abs() <= SHORT_DIPOLE_ABS,
        format!("short dipole G = {short:.5}"),
        &mut pass,
        &mut notes,
    );
    let quad = pattern_integral(0.02, 0.0081, 0.0).map_err(err)?;
    let (mc, se) = pattern_integral_monte_carlo(0.02, 0.0081, 0.0, 400_000, 2024);
    let z = (mc - quad).abs() / se;
    check(z <= MC_SIGMAS, format!("Monte Carlo {z:.2}σ from quadrature"), &mut pass, &mut notes);
    Ok((pass, notes.join("; ")))
}

fn dipole_limit() -> Outcome {
    let v = to_nv_per_cm(thermal_dipole_limit(293.0, 0.0081).map_err(err)?);
    let ratio = MEASURED_S / v;
    let ok = (v - DIPOLE_LIMIT_TARGET).abs() <= DIPOLE_REL * DIPOLE_LIMIT_TARGET
        && (ratio - DIPOLE_RATIO_TARGET).abs() <= DIPOLE_REL * DIPOLE_RATIO_TARGET;
    Ok((ok, format!("limit {v:.3} nV/cm/√Hz, S/limit = {ratio:.3} (targets {DIPOLE_LIMIT_TARGET}, {DIPOLE_RATIO_TARGET} ± 5%)")))
}

fn interaction_dephasing() -> Outcome {
    let cfg = ExperimentConfig::reference();
    let s = summarize(&cfg).map_err(err)?;
    let g = s.gamma_r / TWO_PI;
    let n_b = blockade_geometry(&cfg).map_err(err)?.n_b;
    let ok = (g - GAMMA_R_TARGET_HZ).abs() <= GAMMA_R_REL * GAMMA_R_TARGET_HZ
        && (N_B_TARGET / N_B_FACTOR..=N_B_TARGET * N_B_FACTOR).contains(&n_b);
    Ok((ok, format!("γ_r/2π = {:.3} MHz (3.0 ± 35%), n_b = {n_b:.4} (0.01 within ×3)", g / 1e6)))
}

fn psn_sensitivity() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();
    let op = OperatingPoint::evaluate(&cfg).map_err(err)?;
    let v = to_nv_per_cm(op.components.nef_ph);
    check(
        (v - NEF_PH_TARGET).abs() <= NEF_PH_REL * NEF_PH_TARGET,
        format!("NEF_ph(7.6 μW) = {v:.2} nV/cm/√Hz (target {NEF_PH_TARGET} ± 15%)"),
        &mut pass,
        &mut notes,
    );
    let omega = TWO_PI * CONSTANTS.c / cfg.lambda_p;
    let at = |p: f64| nef_ph_formula(cfg.mu_mw, op.transmission, omega, p, op.slope);
    let mut scaling_ok = true;
    let mut last = f64::INFINITY;
    for k in 0..6 {
        let p = cfg.probe_power * 2f64.powi(k);
        let e = at(p).map_err(err)?;
        let expect = at(cfg.probe_power).map_err(err)? / 2f64.powf(0.5 * k as f64);
        scaling_ok &= e < last && (e - expect).abs() <= PSN_SCALING_REL * expect;
        last = e;
    }
    check(scaling_ok, "P₀^(-1/2) scaling at fixed T_P".into(), &mut pass, &mut notes);
    Ok((pass, notes.join("; ")))
}

fn max_diff(a: &DensityMatrix4, b: &DensityMatrix4) -> f64 {
    (a.rho - b.rho).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn relaxed(l: &Liouvillian, gamma: f64) -> Result<DensityMatrix4, String> {
    let dt = 2e-2 / gamma;
    let chunk = 50.0 / gamma;
    let mut rho = DensityMatrix4::ground();
    for _ in 0..4000 {
        let next = time_evolve(l, &rho, chunk, dt).map_err(err)?;
        let change = max_diff(&next, &rho);
        rho = next;
        if change < 1e-12 {
            return Ok(rho);
        }
    }
    Err("time evolution did not settle".into())
}

fn solver_oracles() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();
    let gamma = cfg.gamma_e;
    let base = Drive::from_config(&cfg);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let drive = Drive {
            omega_p: gamma * rng.random_range(0.1..1.0),
            omega_c: gamma * rng.random_range(0.5..2.0),
            omega_l: gamma * rng.random_range(0.0..1.0),
            delta_p: gamma * rng.random_range(-1.0..1.0),
            ..base
        };
        let rates = Rates {
            gamma_e: gamma,
            gamma_r: gamma * rng.random_range(0.01..0.1),
            gamma_rp: gamma * rng.random_range(0.01..0.1),
            dephasing: gamma * rng.random_range(0.01..0.1),
        };
        let l = Liouvillian::new(&drive.hamiltonian(&LevelShifts::default(), 0.0, 0.0), &rates).map_err(err)?;
        let ss = steady_state(&l).map_err(err)?;
        worst = worst.max(max_diff(&relaxed(&l, gamma)?, &ss));
    }
    check(worst < STEADY_VS_EVOLVE, format!("steady vs evolved {worst:.1e}"), &mut pass, &mut notes);

    let mut two = 0.0f64;
    for (op, delta) in [(0.01, 0.0), (0.3, 0.7), (1.2, -0.4), (2.0, 1.5)] {
        let (op, delta) = (op * gamma, delta * gamma);
        let drive = Drive { omega_p: op, omega_c: 0.0, omega_l: 0.0, omega_s: 0.0, delta_p: delta, ..base };
        // Undriven levels 3 and 4 relax away so the steady state is unique.
        let rates = Rates { gamma_e: gamma, gamma_r: gamma, gamma_rp: gamma, dephasing: 0.0 };
        let l = Liouvillian::new(&drive.hamiltonian(&LevelShifts::default(), 0.0, 0.0), &rates).map_err(err)?;
        let rho21 = steady_state(&l).map_err(err)?.rho21();
        // Two-level optical Bloch closed form with H = −Δ|2⟩⟨2| − (Ω/2)(|2⟩⟨1| + h.c.).
        let expect = Complex64::new(-delta, 0.5 * gamma) * (0.5 * op) / (delta * delta + 0.25 * gamma * gamma + 0.5 * op * op);
        two = two.max((rho21 - expect).norm());
    }
    check(two < TWO_LEVEL_ABS, format!("two-level {two:.1e}"), &mut pass, &mut notes);

    let dephasing = cfg.gamma0 + TWO_PI * 3.0e6;
    let model = CoherenceModel::new(&cfg, LevelShifts::default(), dephasing, cfg.omega_l).map_err(err)?;
    let avg = model.average().map_err(err)?;
    let n = 40_001;
    let vmax = 5.0 * model.u;
    let h = 2.0 * vmax / (n - 1) as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let v = -vmax + h * i as f64;
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        sum += model.rho21_at(v).map_err(err)? * (w * (-(v / model.u).powi(2)).exp());
    }
    let trap = sum * (h / (model.u * PI.sqrt()));
    let q = (avg - trap).norm();
    check(q < QUADRATURE_ABS, format!("quadrature vs trapezoid {q:.1e}"), &mut pass, &mut notes);

    let rest = model.rho21_at(0.0).map_err(err)?;
    let zero = CoherenceModel::new(&cfg.with_temperature(0.0), LevelShifts::default(), dephasing, cfg.omega_l)
        .map_err(err)?
        .average()
        .map_err(err)?;
    let tiny = CoherenceModel::new(&cfg.with_temperature(1e-15), LevelShifts::default(), dephasing, cfg.omega_l)
        .map_err(err)?
        .average()
        .map_err(err)?;
    let cold = (zero - rest).norm().max((tiny - rest).norm());
    check(cold < COLD_LIMIT_ABS, format!("T_a→0 {cold:.1e}"), &mut pass, &mut notes);
    Ok((pass, notes.join("; ")))
}

fn sweep_morphology() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();

    let powers = cfg.n_vs_power.powers().to_vec();
    let table = sweep::sweep_probe_power(&cfg, &powers).map_err(err)?;
    let i = table.argmin();
    let target = powers.iter().position(|p| (p - 7.6e-6).abs() < 1e-12).ok_or("7.6 μW not on the grid")?;
    check(
        i.abs_diff(target) <= 1,
        format!("power minimum at {:.2} μW (target 7.6 ± one step), r = {:.2}", powers[i] * 1e6, table.r),
        &mut pass,
        &mut notes,
    );

    let atoms = sweep::log_grid(1e4, 5.2e5, 12);
    let t = sweep::sweep_atom_number(&cfg, &atoms, table.r).map_err(err)?;
    let s = t.totals();
    let floor = t.rows[0].budget.nef_ex;
    let nonincreasing = s.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));
    let above = s.iter().all(|&v| v > floor);
    let drops: Vec<f64> = s.windows(2).map(|w| w[0] - w[1]).collect();
    let flattening = drops.windows(2).all(|d| d[1] <= d[0] * (1.0 + 1e-9));
    check(
        nonincreasing && above && flattening,
        format!(
            "S(N) {:.1} → {:.1} nonincreasing {nonincreasing}, above floor {above}, flattening {flattening}",
            to_nv_per_cm(s[0]),
            to_nv_per_cm(*s.last().unwrap())
        ),
        &mut pass,
        &mut notes,
    );

    let temps = [2e-4, 2e-3, 2e-2];
    let ods = [0.05, 0.1, 0.33, 1.0, 3.0, 10.0, 20.0, 30.0];
    let m = sweep::map_temperature_od(&cfg, &temps, &ods, table.r).map_err(err)?;
    let global = m.ratio.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    check(
        m.ratio[0][0] <= global,
        format!("coldest-thinnest ratio {:.2} vs map minimum {global:.2}", m.ratio[0][0]),
        &mut pass,
        &mut notes,
    );
    let cold = sweep::psn_curves(&cfg, &[TWO_PI * 0.3e6], &ods).map_err(err)?;
    let widths = [TWO_PI * 0.3e6];
    let t_cold = rydberg_sensor::quantities::temperature_for_doppler_width(&cfg, widths[0]);
    let beats = ods.iter().zip(&cold[0]).any(|(&d, &ph)| {
        let c = sweep::config_at_cell(&cfg, t_cold, d).expect("cell config");
        OperatingPoint::evaluate(&c).map(|p| ph < p.components.nef_at).unwrap_or(false)
    });
    let best = cold[0].iter().cloned().fold(f64::INFINITY, f64::min);
    check(beats, format!("Γ_D = 0.3 MHz: NEF_ph below NEF_at somewhere (min NEF_ph {:.2})", to_nv_per_cm(best)), &mut pass, &mut notes);
    let thick: Vec<f64> = ods.iter().zip(&m.nef_ph[0]).filter(|(d, _)| **d >= 10.0).map(|(_, v)| *v).collect();
    let worsens = thick.windows(2).all(|w| w[1] > w[0]);
    check(worsens, "PSN worsens with D_opt above 10".into(), &mut pass, &mut notes);
    Ok((pass, notes.join("; ")))
}

fn white_trace(n: usize, fs: f64, nev: f64, seed: u64) -> TimeTrace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, nev * (0.5 * fs).sqrt()).unwrap();
    TimeTrace {
        sample_rate: fs,
        samples: (0..n).map(|_| normal.sample(&mut rng)).collect(),
        meta: TraceMeta { seed, e_cal: 0.0, delta_s: 0.0, phi0: 0.0, window_ms: n as f64 / fs * 1e3 },
    }
}

fn dsp_chain() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();

    let (n, fs, f, a) = (2000, 2e6, 10e3, 0.37);
    let sine = TimeTrace {
        sample_rate: fs,
        samples: (0..n).map(|i| a * (TWO_PI * f * i as f64 / fs + 0.3).sin()).collect(),
        meta: TraceMeta { seed: 0, e_cal: 0.0, delta_s: 0.0, phi0: 0.0, window_ms: 1.0 },
    };
    let spec = dsp::spectral_density(&sine, Window::Rectangular, Detrend::None, Calibration::Nev(cfg.nev)).map_err(err)?;
    let got = dsp::tone_amplitude(&spec, f);
    check((got - a).abs() <= SINE_REL * a, format!("sine {:.4}% off", 100.0 * (got / a - 1.0)), &mut pass, &mut notes);

    let nev = 1e-6;
    let mean = (0..50)
        .map(|s| {
            let t = white_trace(n, fs, nev, s);
            dsp::spectral_density(&t, Window::Rectangular, Detrend::None, Calibration::Nev(nev))
                .map(|sp| sp.band_floor(1e3, 999e3))
        })
        .collect::<Result<Vec<f64>, _>>()
        .map_err(err)?
        .iter()
        .sum::<f64>()
        / 50.0;
    check((mean - nev).abs() <= NOISE_FLOOR_REL * nev, format!("noise floor {:.3} μV/√Hz", mean * 1e6), &mut pass, &mut notes);

    let noise = NoiseLevels::from_config(&cfg);
    let pts = dsp::calibration_points(&cfg, &[1e-3, 2e-3, 4e-3, 7e-3, 1e-2], &noise, 100, 11).map_err(err)?;
    let resp = dsp::responsivity(&pts).map_err(err)?;
    check(
        resp.through_origin.r_squared > R_SQUARED_MIN,
        format!("R² = {:.5}, R_h = {:.3} V/(V/m)", resp.through_origin.r_squared, resp.r_h),
        &mut pass,
        &mut notes,
    );

    let counts = [1, 10, 100, 1000, 10000];
    let e = dsp::empirical_emin(&cfg, &noise, resp.r_h, &counts, (10e3, 300e3), 99).map_err(err)?;
    let x: Vec<f64> = e.iter().map(|p| p.traces as f64).collect();
    let y: Vec<f64> = e.iter().map(|p| p.e_min).collect();
    let (_, p) = dsp::power_law_fit(&x, &y).map_err(err)?;
    check((p - EXPONENT_TARGET).abs() <= EXPONENT_ABS, format!("E_min exponent {p:.3}"), &mut pass, &mut notes);

    let pv = to_nv_per_cm(dsp::min_detectable_field(from_nv_per_cm(MEASURED_S), 420.0).map_err(err)?) * 1e3;
    check(
        (pv - EMIN_ANALYTIC_PV).abs() <= EMIN_ABS_PV,
        format!("E_min(10.0, 420 s) = {pv:.1} pV/cm (measured {EMIN_MEASURED_PV}, gap {:.0}%)", 100.0 * (EMIN_MEASURED_PV / pv - 1.0)),
        &mut pass,
        &mut notes,
    );
    Ok((pass, notes.join("; ")))
}

fn lorentzian(f3db: f64, n: usize) -> Spectrum {
    let gamma = f3db * TWO_PI / (2f64.sqrt() - 1.0).sqrt();
    let grid = spectra::linear_grid(-5.0 * gamma, 5.0 * gamma, n);
    let values = grid.iter().map(|d| 1.0 / (1.0 + (d / gamma).powi(2))).collect();
    Spectrum::new(grid, values).unwrap()
}

fn fit_round_trips() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();
    let derived = derive(&cfg).map_err(err)?;
    let (g3, g4) = (TWO_PI * 3.1e6, TWO_PI * 2.0e6);
    let base = ChiParams {
        omega_c: cfg.omega_c0,
        omega_l: TWO_PI * 8.0e6,
        gamma2: 0.5 * cfg.gamma_e,
        gamma3: g3,
        gamma4: g4,
        shift3: 0.0,
        shift4: 0.0,
        n0: cfg.n_at,
        mu12: cfg.mu_12,
    };
    let fixed = ChiFixed { base, k_p: derived.k_p, length: cfg.length_l };
    let grid = spectra::linear_grid(-TWO_PI * 15e6, TWO_PI * 15e6, 301);
    let values = grid
        .iter()
        .map(|&d| spectra::chi_transmission(&base, d, fixed.k_p, fixed.length))
        .collect::<Result<Vec<f64>, _>>()
        .map_err(err)?;
    let s = Spectrum::new(grid, values).map_err(err)?;
    let fit = spectra::fit_dephasing(&s, &fixed, Some((2.0 * g3, 2.0 * g4))).map_err(err)?;
    let (e3, e4) = (fit.get("gamma3") / g3 - 1.0, fit.get("gamma4") / g4 - 1.0);
    check(
        e3.abs() <= FIT_CLEAN_REL && e4.abs() <= FIT_CLEAN_REL,
        format!("γ₃, γ₄ recovered to {:.1e}, {:.1e}", e3, e4),
        &mut pass,
        &mut notes,
    );

    let clean = lorentzian(F3DB_TARGET, 201);
    let f = spectra::fit_lorentzian(&clean).map_err(err)?.get("f_3db");
    check((f / F3DB_TARGET - 1.0).abs() <= FIT_CLEAN_REL, format!("f_3dB clean {:.4} MHz", f / 1e6), &mut pass, &mut notes);

    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = clean.values.iter().map(|x| x + noise.sample(&mut rng)).collect();
        let s = Spectrum::new(clean.detunings.clone(), v).map_err(err)?;
        let f = spectra::fit_lorentzian(&s).map_err(err)?.get("f_3db");
        worst = worst.max((f / F3DB_TARGET - 1.0).abs());
    }
    check(worst <= FIT_NOISY_REL, format!("f_3dB at 1% noise, worst of 100 seeds {:.2}%", worst * 100.0), &mut pass, &mut notes);
    Ok((pass, notes.join("; ")))
}

fn coherence_chain() -> Outcome {
    let (mut pass, mut notes) = (true, Vec::new());
    let cfg = ExperimentConfig::reference();
    let gamma_t = derive(&cfg).map_err(err)?.gamma_t;
    let gamma_r = TWO_PI * 3.0e6;
    let t2 = coherence_time(cfg.gamma0, gamma_t, gamma_r, cfg.gamma_r_decay).map_err(err)?;
    let oracle = 1.0 / (cfg.gamma0 + gamma_t + gamma_r + 0.5 * cfg.gamma_r_decay);
    check(
        (t2 / oracle - 1.0).abs() <= T2_REL && (t2 - T2_TARGET).abs() <= 0.01 * T2_TARGET,
        format!("T₂ = {:.2} ns (oracle {:.2} ns)", t2 * 1e9, oracle * 1e9),
        &mut pass,
        &mut notes,
    );
    let e = to_nv_per_cm(nef_at(cfg.mu_mw, 5.2e5, t2).map_err(err)?);
    check(
        (e - NEF_AT_TARGET).abs() <= NEF_AT_REL * NEF_AT_TARGET,
        format!("NEF_at(5.2e5) = {e:.2} nV/cm/√Hz, calibration-anchored μ_MW"),
        &mut pass,
        &mut notes,
    );
    Ok((pass, notes.join("; ")))
}

fn model_vs_measured() -> Outcome {
    let cfg = ExperimentConfig::reference();
    let (_, b) = sweep::budget(&cfg).map_err(err)?;
    let s = to_nv_per_cm(b.total);
    let ratio = (s / MEASURED_S).max(MEASURED_S / s);
    Ok((ratio <= MODEL_VS_MEASURED_FACTOR, format!("model S = {s:.2} vs measured {MEASURED_S} (factor {ratio:.2}, bound {MODEL_VS_MEASURED_FACTOR})")))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("budget arithmetic", budget_arithmetic),
        ("blackbody/vacuum NEF", blackbody_nef),
        ("antenna gain", antenna),
        ("dipole thermal limit", dipole_limit),
        ("interaction dephasing", interaction_dephasing),
        ("PSN sensitivity", psn_sensitivity),
        ("solver oracles", solver_oracles),
        ("sweep morphology", sweep_morphology),
        ("DSP chain", dsp_chain),
        ("fit round-trips", fit_round_trips),
        ("coherence/SQL chain", coherence_chain),
    ];
    let mut out = std::io::stdout().lock();
    let mut passed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        passed += ok as usize;
        let tag = if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "{tag} {:>2}. {name} [{:.1} s]: {detail}", i + 1, start.elapsed().as_secs_f64());
        let _ = out.flush();
    }
    let (ok, detail) = model_vs_measured().unwrap_or_else(|e| (false, e));
    let _ = writeln!(out, "{} note: {detail}", if ok { "within" } else { "outside" });
    let _ = writeln!(out, "acceptance: {passed}/{} criteria passed", criteria.len());
    drop(out);
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
