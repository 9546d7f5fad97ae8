//! Transmission spectra over probe detuning, the effective four-level
//! susceptibility, and least-squares fits of both.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch::LevelShifts;
use crate::doppler::{transmission, CoherenceModel};
use crate::error::{Error, Result};
use crate::interactions;
use crate::noise_budget::bloch_dephasing;
use crate::quantities::{derive, ExperimentConfig, CONSTANTS, TWO_PI};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Spectrum {
    /// Probe (or intermediate-frequency) detunings, rad/s.
    pub detunings: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn new(detunings: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if detunings.len() != values.len() {
            return Err(Error::Parameter("detuning and value columns differ in length".into()));
        }
        if detunings.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("detuning grid must be strictly increasing".into()));
        }
        if values.iter().chain(&detunings).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("spectrum holds non-finite values".into()));
        }
        Ok(Self { detunings, values })
    }

    /// Two-column CSV: detuning in Hz, value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("detuning_hz,value\n");
        for (d, v) in self.detunings.iter().zip(&self.values) {
            out.push_str(&format!("{:e},{:e}\n", d / TWO_PI, v));
        }
        out
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (mut d, mut v) = (Vec::new(), Vec::new());
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 2 {
                return Err(Error::Parameter(format!("line {}: expected two columns", lineno + 1)));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    d.push(TWO_PI * x);
                    v.push(y);
                }
                _ if d.is_empty() => continue,
                _ => return Err(Error::Parameter(format!("line {}: not a number", lineno + 1))),
            }
        }
        Self::new(d, v)
    }

    /// Local maxima (interior points above both neighbours), largest first.
    pub fn peaks(&self) -> Vec<usize> {
        let v = &self.values;
        let mut idx: Vec<usize> = (1..v.len().saturating_sub(1))
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1])
            .collect();
        idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]));
        idx
    }

    /// Separation of the two highest transmission peaks, rad/s.
    pub fn peak_separation(&self) -> Option<f64> {
        let p = self.peaks();
        if p.len() < 2 {
            return None;
        }
        Some((self.detunings[p[0]] - self.detunings[p[1]]).abs())
    }
}

/// Uniform grid of `n` points over [lo, hi].
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    /// Include the local microwave (Autler–Townes) field.
    pub include_mw: bool,
    /// Include mean-field interaction shifts and γ_r.
    pub interactions: bool,
    /// Let the optical depth fall linearly from `od_start` to `od_end`
    /// along the scan, as it does while the cloud expands.
    pub od_ramp: bool,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { include_mw: true, interactions: true, od_ramp: false }
    }
}

/// Probe transmission on `grid` (rad/s) with default options apart from the
/// microwave switch.
pub fn eit_spectrum(config: &ExperimentConfig, grid: &[f64], include_mw: bool) -> Result<Spectrum> {
    eit_spectrum_with(config, grid, SpectrumOptions { include_mw, ..Default::default() })
}

pub fn eit_spectrum_with(config: &ExperimentConfig, grid: &[f64], opts: SpectrumOptions) -> Result<Spectrum> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("detuning grid must be strictly increasing".into()));
    }
    let derived = derive(config)?;
    let (shifts, dephasing) = if opts.interactions {
        let s = interactions::summarize(config)?;
        (s.shifts, bloch_dephasing(config, &derived, &s))
    } else {
        (LevelShifts::default(), config.gamma0 + derived.gamma_t)
    };
    let omega_l = if opts.include_mw { config.omega_l } else { 0.0 };
    let model = CoherenceModel::new(config, shifts, dephasing, omega_l)?;
    let n = grid.len();
    let values = grid
        .par_iter()
        .enumerate()
        .map(|(i, &delta)| {
            let d_opt = if opts.od_ramp {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                config.od_start + (config.od_end - config.od_start) * frac
            } else {
                derived.d_opt
            };
            let rho = model.with_delta_p(delta).average()?;
            transmission(d_opt, config.gamma_e, config.omega_p0, rho)
        })
        .collect::<Result<Vec<f64>>>()?;
    Spectrum::new(grid.to_vec(), values)
}

/// Inputs of the effective susceptibility. Rates and detunings in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiParams {
    pub omega_c: f64,
    pub omega_l: f64,
    /// Coherence decay rates of ρ₂₁, ρ₃₁, ρ₄₁.
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
    /// Static offsets added to Δ₃ and Δ₄.
    pub shift3: f64,
    pub shift4: f64,
    /// Atomic density, m⁻³.
    pub n0: f64,
    /// Probe dipole moment, C m.
    pub mu12: f64,
}

impl ChiParams {
    /// Parameters matching the master equation at the configured point.
    pub fn from_config(config: &ExperimentConfig, dephasing: f64, shifts: &LevelShifts) -> Self {
        Self {
            omega_c: config.omega_c0,
            omega_l: config.omega_l,
            gamma2: 0.5 * config.gamma_e,
            gamma3: dephasing + 0.5 * config.gamma_r_decay,
            gamma4: dephasing + 0.5 * config.gamma_rp_decay,
            shift3: shifts.v_vdw + shifts.v_dd,
            shift4: shifts.v_dd + shifts.v_vdw_prime,
            n0: config.n_at,
            mu12: config.mu_12,
        }
    }

    /// 2 n₀ |μ₁₂|² / (ħ ε₀).
    pub fn strength(&self) -> f64 {
        2.0 * self.n0 * self.mu12 * self.mu12 / (CONSTANTS.hbar * CONSTANTS.eps0)
    }
}

/// Effective four-level susceptibility at probe detuning `delta_p`, with
/// complex detunings d_j = Δ_j + iγ_j (the sign that makes Im χ ≥ 0 in the
/// rotating frame used by the master equation).
pub fn chi_eff(p: &ChiParams, delta_p: f64) -> Result<Complex64> {
    let d2 = Complex64::new(delta_p, p.gamma2);
    let d3 = Complex64::new(delta_p + p.shift3, p.gamma3);
    let d4 = Complex64::new(delta_p + p.shift4, p.gamma4);
    let l2 = 0.25 * p.omega_l * p.omega_l;
    let c2 = 0.25 * p.omega_c * p.omega_c;
    let num = d3 * d4 - l2;
    let den = d2 * d3 * d4 - d2 * l2 - d4 * c2;
    let scale = d2.norm() * d3.norm() * d4.norm() + d2.norm() * l2 + d4.norm() * c2;
    if den.norm() <= 1e-14 * scale || !den.norm().is_finite() {
        return Err(Error::Singularity { detuning: delta_p });
    }
    Ok(-p.strength() * num / den)
}

/// Intensity transmission exp(−k_P L Im χ / 2) of a thin medium.
pub fn chi_transmission(p: &ChiParams, delta_p: f64, k_p: f64, length: f64) -> Result<f64> {
    Ok((-0.5 * k_p * length * chi_eff(p, delta_p)?.im).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    /// Fitted values keyed by name; units in `units`.
    pub params: BTreeMap<String, f64>,
    pub units: BTreeMap<String, String>,
    /// Parameter covariance in the order of `order`.
    pub covariance: Vec<Vec<f64>>,
    pub order: Vec<String>,
    pub residual_rms: f64,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> f64 {
        self.params[name]
    }

    pub fn std_err(&self, name: &str) -> f64 {
        let i = self.order.iter().position(|n| n == name).expect("parameter exists");
        self.covariance[i][i].max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmSolution {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub residual_rms: f64,
    pub iterations: usize,
}

/// Damped Gauss–Newton (Levenberg–Marquardt) minimization of Σ r².
///
/// The damping starts at 1e-3 of the mean Hessian diagonal, shrinks by 10
/// after an accepted step and grows by 10 after a rejected one.
pub fn levenberg_marquardt(
    residuals: impl Fn(&[f64]) -> Result<Vec<f64>>,
    start: &[f64],
    max_iter: usize,
) -> Result<LmSolution> {
    let np = start.len();
    let mut p = start.to_vec();
    let mut r = DVector::from_vec(residuals(&p)?);
    let m = r.len();
    if m < np {
        return Err(Error::Fit { message: "fewer points than parameters".into(), residual_rms: f64::NAN });
    }
    let jac = |p: &[f64], r0: &DVector<f64>| -> Result<DMatrix<f64>> {
        let mut j = DMatrix::zeros(m, np);
        for k in 0..np {
            let h = 1e-7 * p[k].abs().max(1e-7);
            let mut q = p.to_vec();
            q[k] += h;
            let rk = DVector::from_vec(residuals(&q)?);
            j.set_column(k, &((rk - r0) / h));
        }
        Ok(j)
    };
    let mut cost = r.norm_squared();
    let mut lambda = -1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut j = jac(&p, &r)?;
    while iterations < max_iter {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if lambda < 0.0 {
            lambda = 1e-3 * jtj.diagonal().mean().max(f64::MIN_POSITIVE);
        }
        let mut stepped = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let rt = match residuals(&trial) {
                Ok(v) => DVector::from_vec(v),
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let small_step = step.iter().zip(&p).all(|(s, x)| s.abs() <= 1e-10 * x.abs().max(1e-12));
                let small_gain = cost - ct <= 1e-15 * cost;
                p = trial;
                r = rt;
                cost = ct;
                lambda = (lambda / 10.0).max(1e-300);
                stepped = true;
                if small_step || small_gain || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !stepped {
            // No descent direction left: at a minimum to working precision.
            converged = true;
        }
        if converged {
            break;
        }
        j = jac(&p, &r)?;
    }
    let rms = (cost / m as f64).sqrt();
    if !converged {
        return Err(Error::Fit { message: format!("no convergence after {max_iter} iterations"), residual_rms: rms });
    }
    let j = jac(&p, &r)?;
    let jtj = j.transpose() * &j;
    let dof = (m - np).max(1) as f64;
    let sigma2 = cost / dof;
    let inv = jtj.clone().try_inverse().filter(|inv| inv.iter().all(|x| x.is_finite()));
    let Some(inv) = inv else {
        return Err(Error::Fit { message: "singular normal matrix".into(), residual_rms: rms });
    };
    // Condition check: a parameter the data do not constrain.
    let diag_ok = (0..np).all(|k| jtj[(k, k)] > 1e-20 * jtj.diagonal().max());
    if !diag_ok {
        return Err(Error::Fit { message: "degenerate parameter".into(), residual_rms: rms });
    }
    let cov = (&inv + inv.transpose()) * (0.5 * sigma2);
    Ok(LmSolution { params: p, covariance: cov, residual_rms: rms, iterations })
}

/// Quantities held fixed when fitting γ₃ and γ₄.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiFixed {
    pub base: ChiParams,
    pub k_p: f64,
    pub length: f64,
}

impl ChiFixed {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let derived = derive(config)?;
        let s = interactions::summarize(config)?;
        let base = ChiParams::from_config(config, bloch_dephasing(config, &derived, &s), &s.shifts);
        Ok(Self { base, k_p: derived.k_p, length: config.length_l })
    }

    fn with(&self, g3: f64, g4: f64) -> ChiParams {
        ChiParams { gamma3: g3, gamma4: g4, ..self.base }
    }
}

const MHZ: f64 = TWO_PI * 1e6;

/// Width of the region around peak `i` where the values stay above the
/// midpoint between the peak and the spectrum minimum.
fn half_width(s: &Spectrum, i: usize) -> f64 {
    let v = &s.values;
    let floor = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let half = 0.5 * (v[i] + floor);
    let mut lo = i;
    while lo > 0 && v[lo] > half {
        lo -= 1;
    }
    let mut hi = i;
    while hi + 1 < v.len() && v[hi] > half {
        hi += 1;
    }
    0.5 * (s.detunings[hi] - s.detunings[lo])
}

/// Fits γ₃ and γ₄ of the effective susceptibility to a transmission
/// spectrum. `guess` overrides the width-based starting point.
pub fn fit_dephasing(spectrum: &Spectrum, fixed: &ChiFixed, guess: Option<(f64, f64)>) -> Result<FitResult> {
    let (g3, g4) = match guess {
        Some(g) => g,
        None => {
            let peaks = spectrum.peaks();
            let w = match peaks.first() {
                Some(&i) => half_width(spectrum, i),
                None => fixed.base.gamma3,
            };
            let w = if w > 0.0 { w } else { fixed.base.gamma3.max(MHZ) };
            (w, w)
        }
    };
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        let (a, b) = (p[0] * MHZ, p[1] * MHZ);
        if a <= 0.0 || b <= 0.0 {
            return Err(Error::Domain("negative dephasing".into()));
        }
        let chi = fixed.with(a, b);
        spectrum
            .detunings
            .iter()
            .zip(&spectrum.values)
            .map(|(&d, &y)| Ok(chi_transmission(&chi, d, fixed.k_p, fixed.length)? - y))
            .collect()
    };
    let sol = levenberg_marquardt(model, &[g3 / MHZ, g4 / MHZ], 200)?;
    let mut params = BTreeMap::new();
    params.insert("gamma3".to_string(), sol.params[0] * MHZ);
    params.insert("gamma4".to_string(), sol.params[1] * MHZ);
    let units = ["gamma3", "gamma4"].iter().map(|k| (k.to_string(), "rad/s".to_string())).collect();
    let cov = (0..2)
        .map(|i| (0..2).map(|j| sol.covariance[(i, j)] * MHZ * MHZ).collect())
        .collect();
    Ok(FitResult {
        params,
        units,
        covariance: cov,
        order: vec!["gamma3".into(), "gamma4".into()],
        residual_rms: sol.residual_rms,
        iterations: sol.iterations,
    })
}

/// 3-dB point (amplitude down by √2) of a Lorentzian with half width γ,
/// in Hz.
pub fn f_3db(gamma: f64) -> f64 {
    gamma * (2f64.sqrt() - 1.0).sqrt() / TWO_PI
}

/// Fits A/(1 + ((δ − δ₀)/γ)²) + c to a response curve over δ in rad/s.
/// Reports the centre, half width, FWHM and the 3-dB frequency.
pub fn fit_lorentzian(response: &Spectrum) -> Result<FitResult> {
    let (x, y) = (&response.detunings, &response.values);
    if x.len() < 5 {
        return Err(Error::Fit { message: "need at least five points".into(), residual_rms: f64::NAN });
    }
    let ymax = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ymin = y.iter().cloned().fold(f64::INFINITY, f64::min);
    if ymax - ymin <= 1e-12 * ymax.abs().max(ymin.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::Fit { message: "response is constant".into(), residual_rms: 0.0 });
    }
    let imax = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    let span = x[x.len() - 1] - x[0];
    let guess_gamma = {
        let w = half_width(response, imax);
        if w > 0.0 { w } else { 0.1 * span }
    };
    // Work in units of the guessed width for conditioning.
    let unit = guess_gamma;
    let amp = ymax - ymin;
    let model = |p: &[f64]| -> Result<Vec<f64>> {
        Ok(x.iter()
            .zip(y)
            .map(|(&d, &v)| {
                let u = (d / unit - p[1]) / p[2];
                p[0] * amp / (1.0 + u * u) + p[3] * amp - v
            })
            .collect())
    };
    let start = [1.0, x[imax] / unit, 1.0, ymin / amp];
    let sol = levenberg_marquardt(model, &start, 200)?;
    let p = &sol.params;
    let gamma = (p[2] * unit).abs();
    let mut params = BTreeMap::new();
    params.insert("amplitude".to_string(), p[0] * amp);
    params.insert("center".to_string(), p[1] * unit);
    params.insert("gamma".to_string(), gamma);
    params.insert("offset".to_string(), p[3] * amp);
    params.insert("fwhm".to_string(), 2.0 * gamma);
    params.insert("f_3db".to_string(), f_3db(gamma));
    let units: BTreeMap<String, String> = [
        ("amplitude", "response"),
        ("center", "rad/s"),
        ("gamma", "rad/s"),
        ("offset", "response"),
        ("fwhm", "rad/s"),
        ("f_3db", "Hz"),
    ]
    .iter()
    .map(|(k, u)| (k.to_string(), u.to_string()))
    .collect();
    let scale = [amp, unit, unit, amp];
    let cov = (0..4)
        .map(|i| (0..4).map(|j| sol.covariance[(i, j)] * scale[i] * scale[j]).collect())
        .collect();
    Ok(FitResult {
        params,
        units,
        covariance: cov,
        order: vec!["amplitude".into(), "center".into(), "gamma".into(), "offset".into()],
        residual_rms: sol.residual_rms,
        iterations: sol.iterations,
    })
}
