//! Physical constants, the experiment configuration and the single-atom
//! quantities derived from it.
//!
//! All angular frequencies are stored in rad/s. Interaction coefficients
//! (`c3`, the C6 tables) are stored as ordinary frequencies (Hz m^3, Hz m^6)
//! and converted with a factor 2π where they enter rate equations.

use std::f64::consts::{LN_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * PI;

/// 1 V/m expressed in nV/cm.
pub const NV_PER_CM_PER_V_PER_M: f64 = 1.0e7;

/// 1 GHz μm^6 in Hz m^6.
pub const GHZ_UM6: f64 = 1.0e-27;

/// 1 GHz μm^3 in Hz m^3.
pub const GHZ_UM3: f64 = 1.0e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Planck constant, J s.
    pub h: f64,
    /// Reduced Planck constant, J s.
    pub hbar: f64,
    /// Boltzmann constant, J/K.
    pub kb: f64,
    /// Vacuum permittivity, F/m.
    pub eps0: f64,
    /// Speed of light, m/s.
    pub c: f64,
}

pub const CONSTANTS: PhysicalConstants = PhysicalConstants {
    h: 6.626_070_15e-34,
    hbar: 6.626_070_15e-34 / (2.0 * PI),
    kb: 1.380_649e-23,
    eps0: 8.854_187_812_8e-12,
    c: 299_792_458.0,
};

/// Mass of a ⁸⁷Rb atom, kg.
pub const RB87_MASS: f64 = 1.443_160_648e-25;

/// Converts a field spectral density from V m⁻¹ Hz⁻¹ᐟ² to nV cm⁻¹ Hz⁻¹ᐟ².
pub fn to_nv_per_cm(v_per_m: f64) -> f64 {
    v_per_m * NV_PER_CM_PER_V_PER_M
}

/// Converts a field spectral density from nV cm⁻¹ Hz⁻¹ᐟ² to V m⁻¹ Hz⁻¹ᐟ².
pub fn from_nv_per_cm(nv_per_cm: f64) -> f64 {
    nv_per_cm / NV_PER_CM_PER_V_PER_M
}

/// A coefficient sampled over the polar angle θ ∈ [0, π].
///
/// Serialized as a list of `[theta_rad, value]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct AngularTable {
    theta: Vec<f64>,
    value: Vec<f64>,
}

impl AngularTable {
    pub fn new(theta: Vec<f64>, value: Vec<f64>) -> Result<Self> {
        if theta.len() != value.len() {
            return Err(Error::Parameter("angle and value columns differ in length".into()));
        }
        if theta.len() < 2 {
            return Err(Error::Parameter("angular table needs at least two samples".into()));
        }
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("angle grid must be strictly increasing".into()));
        }
        let tol = 1e-9;
        if theta[0].abs() > tol || (theta[theta.len() - 1] - PI).abs() > tol {
            return Err(Error::Parameter(format!(
                "angle grid must span [0, π], got [{}, {}]",
                theta[0],
                theta[theta.len() - 1]
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("angular table holds a non-finite value".into()));
        }
        Ok(Self { theta, value })
    }

    /// Isotropic table with `n` samples.
    pub fn constant(value: f64, n: usize) -> Self {
        let theta = angle_grid(n);
        let value = vec![value; theta.len()];
        Self { theta, value }
    }

    /// Interpolates linearly in cos 2θ between `at_pole` (θ = 0, π) and
    /// `at_equator` (θ = π/2).
    pub fn cos2theta(at_pole: f64, at_equator: f64, n: usize) -> Self {
        let theta = angle_grid(n);
        let mean = 0.5 * (at_pole + at_equator);
        let half = 0.5 * (at_pole - at_equator);
        let value = theta.iter().map(|t| mean + half * (2.0 * t).cos()).collect();
        Self { theta, value }
    }

    /// Reads a two-column CSV of `theta_rad, value_ghz_um6`. Lines starting
    /// with `#` and a non-numeric header line are skipped.
    pub fn from_csv_ghz_um6(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut theta = Vec::new();
        let mut value = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Parameter(format!("line {}: expected two columns", lineno + 1)))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(v)) => {
                    theta.push(t);
                    value.push(v * GHZ_UM6);
                }
                _ if theta.is_empty() => continue,
                _ => {
                    return Err(Error::Parameter(format!("line {}: not a number", lineno + 1)))
                }
            }
        }
        Self::new(theta, value)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    /// Trapezoid estimate of ∫₀^π f(C(θ)) sin θ dθ.
    pub fn sin_weighted_integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.theta
            .windows(2)
            .zip(self.value.windows(2))
            .map(|(t, v)| {
                let ya = f(v[0]) * t[0].sin();
                let yb = f(v[1]) * t[1].sin();
                0.5 * (t[1] - t[0]) * (ya + yb)
            })
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            theta: self.theta.clone(),
            value: self.value.iter().map(|v| v * factor).collect(),
        }
    }
}

fn angle_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| PI * i as f64 / (n - 1) as f64).collect()
}

impl TryFrom<Vec<[f64; 2]>> for AngularTable {
    type Error = Error;

    fn try_from(rows: Vec<[f64; 2]>) -> Result<Self> {
        let (theta, value) = rows.into_iter().map(|[t, v]| (t, v)).unzip();
        Self::new(theta, value)
    }
}

impl From<AngularTable> for Vec<[f64; 2]> {
    fn from(table: AngularTable) -> Self {
        table
            .theta
            .into_iter()
            .zip(table.value)
            .map(|(t, v)| [t, v])
            .collect()
    }
}

/// Measured atom number against probe power, linearly interpolated.
///
/// Serialized as a list of `[power_w, atom_number]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct PowerTable {
    power: Vec<f64>,
    atoms: Vec<f64>,
}

impl PowerTable {
    pub fn new(power: Vec<f64>, atoms: Vec<f64>) -> Result<Self> {
        if power.len() != atoms.len() || power.is_empty() {
            return Err(Error::Parameter("power table columns must be nonempty and equal in length".into()));
        }
        if power.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("power axis must be strictly increasing".into()));
        }
        if atoms.iter().any(|&n| !(n >= 0.0) || !n.is_finite()) {
            return Err(Error::Parameter("atom numbers must be finite and nonnegative".into()));
        }
        Ok(Self { power, atoms })
    }

    pub fn powers(&self) -> &[f64] {
        &self.power
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn range(&self) -> (f64, f64) {
        (self.power[0], self.power[self.power.len() - 1])
    }

    pub fn interpolate(&self, p: f64) -> Result<f64> {
        let (lo, hi) = self.range();
        let slack = 1e-12 * hi.abs().max(1e-30);
        if !(p >= lo - slack && p <= hi + slack) {
            return Err(Error::Extrapolation {
                axis: "probe power".into(),
                value: p,
                min: lo,
                max: hi,
            });
        }
        if self.power.len() == 1 {
            return Ok(self.atoms[0]);
        }
        let k = self.power.partition_point(|&x| x <= p).clamp(1, self.power.len() - 1);
        let (x0, x1) = (self.power[k - 1], self.power[k]);
        let (y0, y1) = (self.atoms[k - 1], self.atoms[k]);
        Ok(y0 + (y1 - y0) * (p - x0) / (x1 - x0))
    }
}

impl TryFrom<Vec<[f64; 2]>> for PowerTable {
    type Error = Error;

    fn try_from(rows: Vec<[f64; 2]>) -> Result<Self> {
        let (power, atoms) = rows.into_iter().map(|[p, n]| (p, n)).unzip();
        Self::new(power, atoms)
    }
}

impl From<PowerTable> for Vec<[f64; 2]> {
    fn from(table: PowerTable) -> Self {
        table
            .power
            .into_iter()
            .zip(table.atoms)
            .map(|(p, n)| [p, n])
            .collect()
    }
}

/// Every physical input of the model.
///
/// Key names in the JSON file are the field names. Angular-frequency fields
/// (`omega_*`, `delta_*`, `gamma_*`) may instead be given in Hz with a `_hz`
/// suffix. Every key except `c3` is optional and defaults to the cold-atom
/// operating point returned by [`ExperimentConfig::reference`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Peak probe Rabi frequency at `probe_power`, rad/s.
    pub omega_p0: f64,
    /// Peak coupling Rabi frequency, rad/s.
    pub omega_c0: f64,
    /// Local microwave Rabi frequency, rad/s.
    pub omega_l: f64,
    /// Signal microwave Rabi frequency, rad/s.
    pub omega_s: f64,
    /// Probe detuning, rad/s.
    pub delta_p: f64,
    /// Heterodyne intermediate frequency, rad/s.
    pub delta_s: f64,
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub lambda_mw: f64,
    /// Microwave carrier frequency, Hz.
    pub nu_mw: f64,
    /// Decay rate of the intermediate state, rad/s.
    pub gamma_e: f64,
    pub gamma_r_decay: f64,
    pub gamma_rp_decay: f64,
    /// Single-atom EIT dephasing, rad/s.
    pub gamma0: f64,
    /// Rydberg transition dipole moment, C m.
    pub mu_mw: f64,
    /// Probe transition dipole moment, C m.
    pub mu_12: f64,
    pub atom_mass: f64,
    pub temp_a: f64,
    pub temp_amb: f64,
    pub temp_eq: f64,
    /// Atomic density, m⁻³.
    pub n_at: f64,
    pub length_l: f64,
    pub waist_p: f64,
    pub waist_c: f64,
    /// Angle between the local microwave and the laser axis, rad.
    pub beta: f64,
    /// C6(θ) of the |3⟩ pair state, Hz m^6.
    pub c6_table: AngularTable,
    /// C6′(θ) of the |4⟩ pair state, Hz m^6.
    pub c6p_table: AngularTable,
    /// Exchange coefficient, Hz m^3. Required in configuration files.
    pub c3: f64,
    /// EIT linewidth setting the blockade radius, rad/s.
    pub gamma_eit: f64,
    /// Incident probe power, W.
    pub probe_power: f64,
    /// Photodetector noise-equivalent voltage, V/√Hz.
    pub nev: f64,
    /// Photodetector conversion gain, V/W.
    pub pd_gain: f64,
    pub od_start: f64,
    pub od_end: f64,
    pub window_ms: f64,
    /// Sampling rate of synthesized traces, Hz.
    pub sample_rate: f64,
    pub n_vs_power: PowerTable,
    /// Optical depth override; when absent the optical depth is n_at σ₁₂ L.
    pub d_opt: Option<f64>,
    /// Measured responsivity override, V per (V/m).
    pub r_h: Option<f64>,
    /// Correlation coefficient between NEF_at and NEF_ph; when absent it is
    /// computed from the probe-power sweep.
    pub correlation_r: Option<f64>,
    /// Evaluate NEF_ph at the Ω_L maximizing |∂T_P/∂Ω_L| instead of `omega_l`.
    pub optimize_omega_l: bool,
    /// Include γ_r in the Rydberg dephasing of the master equation.
    pub gamma_r_in_bloch: bool,
    /// Velocity integration limit in units of the most probable speed.
    pub doppler_truncation: f64,
}

/// Fields that accept a `_hz` alias.
pub const ANGULAR_FIELDS: &[&str] = &[
    "omega_p0",
    "omega_c0",
    "omega_l",
    "omega_s",
    "delta_p",
    "delta_s",
    "gamma_e",
    "gamma_r_decay",
    "gamma_rp_decay",
    "gamma0",
    "gamma_eit",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ExperimentConfig {
    /// Exchange coefficient for the 39D₅/₂–40P₃/₂ pair used by [`Self::reference`].
    ///
    /// Calibrated so that the mean-field dephasing at the optimal probe power
    /// is 2π × 3.0 MHz; it is not an ab-initio value.
    pub const REFERENCE_C3: f64 = 19.37 * GHZ_UM3;

    /// Microwave dipole moment used by [`Self::reference`], C m.
    ///
    /// Back-solved from an atom-shot-noise limit of 3.8 nV cm⁻¹ Hz⁻¹ᐟ² with
    /// N = 5.2 × 10⁵ and T₂ = 51.3 ns. A calibration constant.
    pub const REFERENCE_MU_MW: f64 = 1.0673e-26;

    /// The cold ⁸⁷Rb heterodyne receiver at its optimal operating point.
    pub fn reference() -> Self {
        Self {
            omega_p0: TWO_PI * 4.7e6,
            omega_c0: TWO_PI * 6.1e6,
            omega_l: TWO_PI * 2.0e6,
            omega_s: 0.0,
            delta_p: 0.0,
            delta_s: TWO_PI * 10.0e3,
            lambda_p: 780.241e-9,
            lambda_c: 481.0e-9,
            lambda_mw: 0.0081,
            nu_mw: 36.9e9,
            gamma_e: TWO_PI * 6.065e6,
            gamma_r_decay: TWO_PI * 1.0e3,
            gamma_rp_decay: TWO_PI * 1.0e3,
            gamma0: TWO_PI * 100.0e3,
            mu_mw: Self::REFERENCE_MU_MW,
            mu_12: 2.534e-29,
            atom_mass: RB87_MASS,
            temp_a: 200e-6,
            temp_amb: 293.0,
            temp_eq: 293.0,
            n_at: 5.68e13,
            length_l: 0.02,
            waist_p: 500e-6,
            waist_c: 400e-6,
            beta: 0.0,
            c6_table: AngularTable::cos2theta(0.38 * GHZ_UM6, 0.14 * GHZ_UM6, 37),
            c6p_table: AngularTable::cos2theta(0.38 * GHZ_UM6, 0.14 * GHZ_UM6, 37),
            c3: Self::REFERENCE_C3,
            gamma_eit: TWO_PI * 3.0e6,
            probe_power: 7.6e-6,
            nev: 0.6e-6,
            pd_gain: 9.5e5,
            od_start: 0.46,
            od_end: 0.22,
            window_ms: 1.0,
            sample_rate: 2.0e6,
            n_vs_power: reference_power_table(),
            d_opt: None,
            r_h: None,
            correlation_r: None,
            optimize_omega_l: false,
            gamma_r_in_bloch: true,
            doppler_truncation: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg: [(&str, f64); 29] = [
            ("omega_p0", self.omega_p0),
            ("omega_c0", self.omega_c0),
            ("omega_l", self.omega_l),
            ("omega_s", self.omega_s),
            ("lambda_p", self.lambda_p),
            ("lambda_c", self.lambda_c),
            ("lambda_mw", self.lambda_mw),
            ("nu_mw", self.nu_mw),
            ("gamma_e", self.gamma_e),
            ("gamma_r_decay", self.gamma_r_decay),
            ("gamma_rp_decay", self.gamma_rp_decay),
            ("gamma0", self.gamma0),
            ("mu_mw", self.mu_mw),
            ("mu_12", self.mu_12),
            ("atom_mass", self.atom_mass),
            ("temp_a", self.temp_a),
            ("temp_amb", self.temp_amb),
            ("temp_eq", self.temp_eq),
            ("n_at", self.n_at),
            ("length_l", self.length_l),
            ("waist_p", self.waist_p),
            ("waist_c", self.waist_c),
            ("c3", self.c3),
            ("gamma_eit", self.gamma_eit),
            ("probe_power", self.probe_power),
            ("nev", self.nev),
            ("pd_gain", self.pd_gain),
            ("od_start", self.od_start),
            ("od_end", self.od_end),
        ];
        for (name, value) in nonneg {
            if !value.is_finite() {
                return Err(Error::validation(name, "must be finite"));
            }
            if value < 0.0 {
                return Err(Error::validation(name, format!("must be nonnegative, got {value}")));
            }
        }
        for (name, value) in [
            ("delta_p", self.delta_p),
            ("delta_s", self.delta_s),
            ("beta", self.beta),
        ] {
            if !value.is_finite() {
                return Err(Error::validation(name, "must be finite"));
            }
        }
        if !(self.window_ms > 0.0) {
            return Err(Error::validation("window_ms", "must be positive"));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::validation("sample_rate", "must be positive"));
        }
        if !(self.doppler_truncation >= 5.0) {
            return Err(Error::validation("doppler_truncation", "must be at least 5"));
        }
        if let Some(d) = self.d_opt {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::validation("d_opt", "must be finite and nonnegative"));
            }
        }
        if let Some(r) = self.r_h {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::validation("r_h", "must be positive"));
            }
        }
        if let Some(r) = self.correlation_r {
            if !(r.abs() <= 1.0) {
                return Err(Error::validation("correlation_r", "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    /// Probe Rabi frequency at incident power `p`, scaling as √p from
    /// `omega_p0` at `probe_power`.
    pub fn omega_p_at(&self, p: f64) -> f64 {
        if self.probe_power > 0.0 {
            self.omega_p0 * (p / self.probe_power).sqrt()
        } else {
            self.omega_p0
        }
    }

    /// Sensing volume: cylinder of radius min(w_p, w_c) and length L.
    pub fn sensing_volume(&self) -> f64 {
        let w = self.waist_p.min(self.waist_c);
        PI * w * w * self.length_l
    }

    /// Same config with the density rescaled so that the sensing volume holds
    /// `atoms` atoms. An optical-depth override scales with the density.
    pub fn with_atom_number(&self, atoms: f64) -> Self {
        let mut cfg = self.clone();
        let n_new = atoms / self.sensing_volume();
        if let Some(d) = self.d_opt {
            cfg.d_opt = Some(if self.n_at > 0.0 { d * n_new / self.n_at } else { 0.0 });
        }
        cfg.n_at = n_new;
        cfg
    }

    /// Same config at another probe power (probe Rabi frequency scaled).
    pub fn with_probe_power(&self, p: f64) -> Self {
        let mut cfg = self.clone();
        cfg.omega_p0 = self.omega_p_at(p);
        cfg.probe_power = p;
        cfg
    }

    /// Same config at another atomic temperature.
    pub fn with_temperature(&self, temp: f64) -> Self {
        Self { temp_a: temp, ..self.clone() }
    }

    /// SHA-256 of the canonical JSON form, first 16 hex digits.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Atom number against probe power for the cold-atom receiver.
///
/// Only three facts about the measured relation are available: N = 5.2 × 10⁵
/// at 7.6 μW, and the atom number falls to less than a tenth of its maximum
/// between 0.33 μW and 9.53 μW. The table is an exponential heating loss
/// through those constraints (N(9.53 μW) = N(0.33 μW)/12).
pub fn reference_power_table() -> PowerTable {
    let powers_uw = [0.33, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 7.6, 8.5, 9.53];
    let scale = 9.2 / 12f64.ln();
    let power: Vec<f64> = powers_uw.iter().map(|p| p * 1e-6).collect();
    let atoms = powers_uw
        .iter()
        .map(|p| (5.2e5 * (-(p - 7.6) / scale).exp()).round())
        .collect();
    PowerTable::new(power, atoms).expect("static table is valid")
}

/// Quantities derived from an [`ExperimentConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedParams {
    pub k_p: f64,
    pub k_c: f64,
    pub k_l: f64,
    /// Most probable speed, m/s.
    pub u: f64,
    /// Resonant absorption cross section, m².
    pub sigma12: f64,
    pub d_opt: f64,
    /// Atoms in the sensing volume.
    pub big_n: f64,
    /// Transit dephasing, rad/s.
    pub gamma_t: f64,
    /// Doppler FWHM of the probe transition, rad/s.
    pub gamma_d: f64,
}

pub fn derive(config: &ExperimentConfig) -> Result<DerivedParams> {
    for (name, value) in [
        ("lambda_p", config.lambda_p),
        ("lambda_c", config.lambda_c),
        ("lambda_mw", config.lambda_mw),
        ("atom_mass", config.atom_mass),
    ] {
        if !(value > 0.0) {
            return Err(Error::Domain(format!("{name} must be positive, got {value}")));
        }
    }
    if !(config.gamma_e > 0.0) {
        return Err(Error::Domain("gamma_e must be positive for the cross section".into()));
    }
    let k = CONSTANTS;
    let k_p = TWO_PI / config.lambda_p;
    let k_c = TWO_PI / config.lambda_c;
    let k_l = TWO_PI / config.lambda_mw;
    let u = (2.0 * k.kb * config.temp_a / config.atom_mass).sqrt();
    let sigma12 = 2.0 * k_p * config.mu_12.powi(2) / (k.hbar * k.eps0 * config.gamma_e);
    let d_opt = config
        .d_opt
        .unwrap_or(config.n_at * sigma12 * config.length_l);
    let big_n = config.n_at * config.sensing_volume();
    let w = config.waist_p.min(config.waist_c);
    let mean_speed = (8.0 * k.kb * config.temp_a / (PI * config.atom_mass)).sqrt();
    let gamma_t = if w > 0.0 {
        mean_speed / (w * (2.0 * LN_2).sqrt())
    } else {
        return Err(Error::Domain("beam waists must be positive".into()));
    };
    let gamma_d = 2.0 * LN_2.sqrt() * k_p * u;
    Ok(DerivedParams {
        k_p,
        k_c,
        k_l,
        u,
        sigma12,
        d_opt,
        big_n,
        gamma_t,
        gamma_d,
    })
}

/// Atomic temperature producing a probe Doppler FWHM `gamma_d` (rad/s).
pub fn temperature_for_doppler_width(config: &ExperimentConfig, gamma_d: f64) -> f64 {
    let k_p = TWO_PI / config.lambda_p;
    let u = gamma_d / (2.0 * LN_2.sqrt() * k_p);
    u * u * config.atom_mass / (2.0 * CONSTANTS.kb)
}

/// Reads and validates a JSON configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Parses a JSON configuration document (see [`ExperimentConfig`]).
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema {
        key: "<document>".into(),
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(Error::Schema {
            key: "<document>".into(),
            message: "top level must be an object".into(),
        });
    };
    let map = convert_hz_keys(map)?;
    if !map.contains_key("c3") {
        return Err(Error::Schema {
            key: "c3".into(),
            message: "required key is missing".into(),
        });
    }
    let config: ExperimentConfig =
        serde_path_to_error::deserialize(Value::Object(map)).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.to_string();
            let key = if path == "." {
                unknown_field_name(&message).unwrap_or(path)
            } else {
                path
            };
            Error::Schema { key, message }
        })?;
    config.validate()?;
    Ok(config)
}

fn unknown_field_name(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    Some(rest[..rest.find('`')?].to_string())
}

fn convert_hz_keys(map: Map<String, Value>) -> Result<Map<String, Value>> {
    let mut out = Map::with_capacity(map.len());
    for (key, value) in map {
        let Some(stem) = key.strip_suffix("_hz") else {
            if out.contains_key(&key) {
                return Err(Error::Schema {
                    key,
                    message: "given both in rad/s and in Hz".into(),
                });
            }
            out.insert(key, value);
            continue;
        };
        if !ANGULAR_FIELDS.contains(&stem) {
            return Err(Error::Schema {
                key,
                message: "no angular-frequency field takes a _hz alias by this name".into(),
            });
        }
        let hz = value.as_f64().ok_or_else(|| Error::Schema {
            key: key.clone(),
            message: "expected a number".into(),
        })?;
        if out.contains_key(stem) {
            return Err(Error::Schema {
                key,
                message: "given both in rad/s and in Hz".into(),
            });
        }
        let rad = serde_json::Number::from_f64(TWO_PI * hz).ok_or_else(|| Error::Schema {
            key: key.clone(),
            message: "not a finite number".into(),
        })?;
        out.insert(stem.to_string(), Value::Number(rad));
    }
    Ok(out)
}
