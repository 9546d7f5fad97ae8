//! Noise-equivalent fields, antenna gain, coherence time and the combined
//! sensitivity. All field spectral densities are in V m⁻¹ Hz⁻¹ᐟ².

use std::collections::BinaryHeap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::doppler::{transmission, CoherenceModel, VelocityGrid};
use crate::error::{Error, Result};
use crate::interactions::{self, InteractionSummary};
use crate::quantities::{derive, DerivedParams, ExperimentConfig, CONSTANTS, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseBudget {
    pub nef_at: f64,
    pub nef_ph: f64,
    pub nef_pd: f64,
    pub nef_ex: f64,
    pub r: f64,
    pub total: f64,
    pub t2: f64,
    pub gain: f64,
}

/// The four noise-equivalent fields before correlation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Components {
    pub nef_at: f64,
    pub nef_ph: f64,
    pub nef_pd: f64,
    pub nef_ex: f64,
}

impl NoiseBudget {
    pub fn new(c: Components, r: f64, t2: f64, gain: f64) -> Result<Self> {
        Ok(Self {
            nef_at: c.nef_at,
            nef_ph: c.nef_ph,
            nef_pd: c.nef_pd,
            nef_ex: c.nef_ex,
            r,
            total: combine(&c, r)?,
            t2,
            gain,
        })
    }

    pub fn components(&self) -> Components {
        Components {
            nef_at: self.nef_at,
            nef_ph: self.nef_ph,
            nef_pd: self.nef_pd,
            nef_ex: self.nef_ex,
        }
    }
}

/// T₂ = 1/(γ₀ + γ_t + γ_r + Γ_r/2).
pub fn coherence_time(gamma0: f64, gamma_t: f64, gamma_r: f64, gamma_r_decay: f64) -> Result<f64> {
    let rate = gamma0 + gamma_t + gamma_r + 0.5 * gamma_r_decay;
    if rate < 0.0 || !rate.is_finite() {
        return Err(Error::Domain(format!("total dephasing rate {rate} is invalid")));
    }
    if rate == 0.0 {
        return Err(Error::InfiniteCoherence);
    }
    Ok(1.0 / rate)
}

/// Atom-shot-noise limit h/(μ √(N T₂)).
pub fn nef_at(mu_mw: f64, big_n: f64, t2: f64) -> Result<f64> {
    if !(mu_mw > 0.0) {
        return Err(Error::Domain(format!("dipole moment must be positive, got {mu_mw}")));
    }
    if !(big_n > 0.0 && t2 > 0.0) {
        return Err(Error::Domain(format!("need N > 0 and T2 > 0, got N = {big_n}, T2 = {t2}")));
    }
    Ok(CONSTANTS.h / (mu_mw * (big_n * t2).sqrt()))
}

/// Photon-shot-noise limit for transmission `t_p`, probe photon energy
/// ħω_P, power `p0` and slope `slope` = ∂T_P/∂Ω_L in (rad/s)⁻¹.
///
/// The prefactor 2√2πħ/μ pairs with a slope per cyclic frequency, which is
/// 2π times the slope per rad/s.
pub fn nef_ph_formula(mu_mw: f64, t_p: f64, omega_probe: f64, p0: f64, slope: f64) -> Result<f64> {
    if !(p0 > 0.0) {
        return Err(Error::Domain(format!("probe power must be positive, got {p0}")));
    }
    if !(mu_mw > 0.0) {
        return Err(Error::Domain(format!("dipole moment must be positive, got {mu_mw}")));
    }
    if !(slope.abs() >= 1e-18) {
        return Err(Error::InsensitiveOperatingPoint { derivative: slope });
    }
    let hbar = CONSTANTS.hbar;
    let per_hz = TWO_PI * slope.abs();
    Ok(2.0 * 2f64.sqrt() * PI * hbar / mu_mw * (t_p * hbar * omega_probe / p0).sqrt() / per_hz)
}

/// Detector limit NEV/R_h.
pub fn nef_pd(nev: f64, r_h: f64) -> Result<f64> {
    if !(r_h > 0.0) {
        return Err(Error::Domain(format!("responsivity must be positive, got {r_h}")));
    }
    Ok(nev / r_h)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Reception pattern of the elongated atomic medium.
pub fn antenna_pattern(theta: f64, phi: f64, length_l: f64, lambda_mw: f64, beta: f64) -> f64 {
    let arg = PI * length_l / lambda_mw * (theta.sin() * phi.sin() - beta.cos());
    theta.sin() * sinc(arg)
}

// 15-point Kronrod rule with embedded 7-point Gauss rule.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Interval {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Globally adaptive Gauss–Kronrod quadrature to relative tolerance `rel`.
pub fn integrate(mut f: impl FnMut(f64) -> f64, a: f64, b: f64, rel: f64) -> Result<f64> {
    const MAX_INTERVALS: usize = 2000;
    let (value, error) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Interval { a, b, value, error });
    let (mut total, mut err) = (value, error);
    while err > rel * total.abs() && err > 1e-300 {
        if heap.len() >= MAX_INTERVALS {
            return Err(Error::Accuracy { change: err / total.abs().max(1e-300) });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let m = 0.5 * (worst.a + worst.b);
        let (v1, e1) = gk15(&mut f, worst.a, m);
        let (v2, e2) = gk15(&mut f, m, worst.b);
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Interval { a: worst.a, b: m, value: v1, error: e1 });
        heap.push(Interval { a: m, b: worst.b, value: v2, error: e2 });
    }
    Ok(heap.iter().map(|i| i.value).sum())
}

/// ∬ F² sin θ dθ dφ over the sphere.
pub fn pattern_integral(length_l: f64, lambda_mw: f64, beta: f64) -> Result<f64> {
    let mut failure = None;
    let outer = integrate(
        |phi| {
            let inner = integrate(
                |theta| antenna_pattern(theta, phi, length_l, lambda_mw, beta).powi(2) * theta.sin(),
                0.0,
                PI,
                1e-10,
            );
            match inner {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        TWO_PI,
        1e-8,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(outer),
    }
}

/// Effective reception gain G = 4π / ∬ F² sin θ dθ dφ.
pub fn antenna_gain(length_l: f64, lambda_mw: f64, beta: f64) -> Result<f64> {
    if !(lambda_mw > 0.0) {
        return Err(Error::Domain(format!("microwave wavelength must be positive, got {lambda_mw}")));
    }
    if !(length_l >= 0.0) {
        return Err(Error::Domain(format!("medium length must be nonnegative, got {length_l}")));
    }
    Ok(4.0 * PI / pattern_integral(length_l, lambda_mw, beta)?)
}

/// Monte Carlo estimate of ∬ F² sin θ dθ dφ with uniform sampling of the
/// sphere. Returns the estimate and its standard error.
pub fn pattern_integral_monte_carlo(
    length_l: f64,
    lambda_mw: f64,
    beta: f64,
    samples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..samples {
        let cos_t: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..TWO_PI);
        let f2 = antenna_pattern(cos_t.acos(), phi, length_l, lambda_mw, beta).powi(2);
        sum += f2;
        sum_sq += f2 * f2;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (4.0 * PI * mean, 4.0 * PI * (var / n).sqrt())
}

/// Thermal photon occupation at frequency `nu` and temperature `temp`.
pub fn thermal_occupation(nu: f64, temp: f64) -> f64 {
    if temp <= 0.0 {
        return 0.0;
    }
    1.0 / (CONSTANTS.h * nu / (CONSTANTS.kb * temp)).exp_m1()
}

/// Blackbody plus vacuum field noise seen through gain `gain`.
pub fn nef_ex(nu_mw: f64, temp_amb: f64, gain: f64) -> Result<f64> {
    if !(nu_mw > 0.0 && gain > 0.0) {
        return Err(Error::Domain(format!("need ν > 0 and G > 0, got ν = {nu_mw}, G = {gain}")));
    }
    let k = CONSTANTS;
    let n_th = thermal_occupation(nu_mw, temp_amb);
    Ok((8.0 * PI * k.h * nu_mw.powi(3) / (k.eps0 * k.c.powi(3) * gain) * (2.0 * n_th + 1.0)).sqrt())
}

/// Pearson correlation of two equally long series.
pub fn correlation(series_at: &[f64], series_ph: &[f64]) -> Result<f64> {
    if series_at.len() != series_ph.len() {
        return Err(Error::UndefinedCorrelation(format!(
            "series lengths differ ({} vs {})",
            series_at.len(),
            series_ph.len()
        )));
    }
    if series_at.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = series_at.len() as f64;
    let ma = series_at.iter().sum::<f64>() / n;
    let mp = series_ph.iter().sum::<f64>() / n;
    let (mut sap, mut saa, mut spp) = (0.0, 0.0, 0.0);
    for (a, p) in series_at.iter().zip(series_ph) {
        let (da, dp) = (a - ma, p - mp);
        sap += da * dp;
        saa += da * da;
        spp += dp * dp;
    }
    if saa == 0.0 || spp == 0.0 {
        return Err(Error::UndefinedCorrelation("a series has zero variance".into()));
    }
    Ok((sap / (saa.sqrt() * spp.sqrt())).clamp(-1.0, 1.0))
}

/// S = √(NEF_at² + 2r NEF_at NEF_ph + NEF_ph² + NEF_pd² + NEF_ex²).
pub fn combine(c: &Components, r: f64) -> Result<f64> {
    if !(r.abs() <= 1.0) {
        return Err(Error::Parameter(format!("correlation must lie in [-1, 1], got {r}")));
    }
    let radicand = c.nef_at.powi(2)
        + 2.0 * r * c.nef_at * c.nef_ph
        + c.nef_ph.powi(2)
        + c.nef_pd.powi(2)
        + c.nef_ex.powi(2);
    Ok(radicand.max(0.0).sqrt())
}

/// Johnson–Nyquist limit of a lossless half-wave dipole.
pub fn thermal_dipole_limit(temp_eq: f64, lambda_mw: f64) -> Result<f64> {
    if !(temp_eq >= 0.0 && lambda_mw > 0.0) {
        return Err(Error::Domain("need T_eq >= 0 and λ > 0".into()));
    }
    let area = 0.41 * lambda_mw * lambda_mw / PI;
    Ok((2.0 * CONSTANTS.kb * temp_eq / (CONSTANTS.eps0 * CONSTANTS.c * area)).sqrt())
}

/// Probe transmission as a function of the local Rabi frequency, on a
/// velocity grid frozen at the nominal operating point so that finite
/// differences see a smooth function.
#[derive(Debug, Clone)]
pub struct TransmissionModel {
    pub model: CoherenceModel,
    pub grid: VelocityGrid,
    pub d_opt: f64,
    pub gamma_e: f64,
}

impl TransmissionModel {
    pub fn new(config: &ExperimentConfig, derived: &DerivedParams, summary: &InteractionSummary) -> Result<Self> {
        let dephasing = bloch_dephasing(config, derived, summary);
        let model = CoherenceModel::new(config, summary.shifts, dephasing, config.omega_l)?;
        let grid = if model.u > 0.0 {
            model.grid()?
        } else {
            VelocityGrid { nodes: vec![0.0], weights: vec![1.0], truncation: model.truncation }
        };
        Ok(Self { model, grid, d_opt: derived.d_opt, gamma_e: config.gamma_e })
    }

    pub fn transmission(&self, omega_l: f64) -> Result<f64> {
        let m = self.model.with_omega_l(omega_l);
        let rho = m.average_on(&self.grid)?;
        transmission(self.d_opt, self.gamma_e, m.drive.omega_p, rho)
    }

    /// ∂T_P/∂Ω_L per rad/s: central difference with step 1e-4 Ω_L,
    /// Richardson-extrapolated once.
    pub fn slope(&self, omega_l: f64) -> Result<f64> {
        let h = 1e-4 * omega_l.abs().max(TWO_PI * 1e3);
        let d = |h: f64| -> Result<f64> {
            Ok((self.transmission(omega_l + h)? - self.transmission(omega_l - h)?) / (2.0 * h))
        };
        let (coarse, fine) = (d(h)?, d(0.5 * h)?);
        Ok((4.0 * fine - coarse) / 3.0)
    }
}

/// Rydberg dephasing entering the master equation.
pub fn bloch_dephasing(config: &ExperimentConfig, derived: &DerivedParams, summary: &InteractionSummary) -> f64 {
    let gamma_r = if config.gamma_r_in_bloch { summary.gamma_r } else { 0.0 };
    config.gamma0 + derived.gamma_t + gamma_r
}

/// Everything the budget needs at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub derived: DerivedParams,
    pub interactions: InteractionSummary,
    pub t2: f64,
    /// Local Rabi frequency where the slope was taken, rad/s.
    pub omega_l: f64,
    pub transmission: f64,
    /// ∂T_P/∂Ω_L per rad/s.
    pub slope: f64,
    /// Heterodyne responsivity used for NEF_pd, V per (V/m).
    pub r_h: f64,
    pub gain: f64,
    pub components: Components,
}

impl OperatingPoint {
    pub fn evaluate(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let derived = derive(config)?;
        let summary = interactions::summarize(config)?;
        let t2 = coherence_time(config.gamma0, derived.gamma_t, summary.gamma_r, config.gamma_r_decay)?;
        let tm = TransmissionModel::new(config, &derived, &summary)?;
        let omega_l = if config.optimize_omega_l {
            crate::sweep::optimize_with(&tm, 0.0, config.omega_c0)?.omega_l
        } else {
            config.omega_l
        };
        let t_p = tm.transmission(omega_l)?;
        let slope = tm.slope(omega_l)?;
        let omega_probe = TWO_PI * CONSTANTS.c / config.lambda_p;
        let nef_ph = nef_ph_formula(config.mu_mw, t_p, omega_probe, config.probe_power, slope)?;
        let r_h = match config.r_h {
            Some(r) => r,
            None => config.pd_gain * config.probe_power * slope.abs() * config.mu_mw / CONSTANTS.hbar,
        };
        let gain = antenna_gain(config.length_l, config.lambda_mw, config.beta)?;
        let components = Components {
            nef_at: nef_at(config.mu_mw, derived.big_n, t2)?,
            nef_ph,
            nef_pd: nef_pd(config.nev, r_h)?,
            nef_ex: nef_ex(config.nu_mw, config.temp_amb, gain)?,
        };
        Ok(Self {
            derived,
            interactions: summary,
            t2,
            omega_l,
            transmission: t_p,
            slope,
            r_h,
            gain,
            components,
        })
    }

    pub fn budget(&self, r: f64) -> Result<NoiseBudget> {
        NoiseBudget::new(self.components, r, self.t2, self.gain)
    }
}
