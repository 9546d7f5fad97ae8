//! Heterodyne photovoltage traces and their spectral analysis.
//!
//! Traces follow the instantaneous transmission at the beat-modulated local
//! Rabi frequency |Ω_L + Ω_S e^{−i(δ_s t + φ₀)}| while the optical depth
//! ramps down over the window. Analysis is a windowed DFT with a
//! single-sided amplitude spectral density, calibrated either analytically
//! or against white noise of known NEV.

use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interactions;
use crate::noise_budget::TransmissionModel;
use crate::quantities::{derive, ExperimentConfig, CONSTANTS, TWO_PI};

/// Cycle rate of the experiment: one analysis window per cycle.
pub const REP_RATE_HZ: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub seed: u64,
    /// Calibration field amplitude, V/m.
    pub e_cal: f64,
    /// Intermediate frequency, rad/s.
    pub delta_s: f64,
    pub phi0: f64,
    pub window_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// Samples per second.
    pub sample_rate: f64,
    /// Photovoltage, V.
    pub samples: Vec<f64>,
    pub meta: TraceMeta,
}

impl TimeTrace {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,volts\n");
        for (i, v) in self.samples.iter().enumerate() {
            out.push_str(&format!("{:e},{:e}\n", i as f64 / self.sample_rate, v));
        }
        out
    }

    /// Raw little-endian f64 samples; rate and metadata live in the sidecar.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.samples.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn read_binary(path: &Path, sample_rate: f64, meta: TraceMeta) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::Parameter("binary trace length is not a multiple of 8 bytes".into()));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Self::checked(sample_rate, samples, meta)
    }

    /// Reads `t_s,volts` rows; the rate comes from the first time step.
    pub fn from_csv(path: &Path, meta: TraceMeta) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut t = Vec::new();
        let mut v = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let mut cols = line.split(',').map(str::trim);
            let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                return Err(Error::Parameter(format!("malformed trace row `{line}`")));
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    t.push(a);
                    v.push(b);
                }
                _ if t.is_empty() => continue,
                _ => return Err(Error::Parameter(format!("malformed trace row `{line}`"))),
            }
        }
        if t.len() < 2 || t[1] <= t[0] {
            return Err(Error::Parameter("trace needs at least two increasing time stamps".into()));
        }
        Self::checked(1.0 / (t[1] - t[0]), v, meta)
    }

    fn checked(sample_rate: f64, samples: Vec<f64>, meta: TraceMeta) -> Result<Self> {
        if !(sample_rate > 0.0) || samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("trace has a bad rate or non-finite samples".into()));
        }
        Ok(Self { sample_rate, samples, meta })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevels {
    /// Detector noise, V/√Hz.
    pub nev: f64,
    /// Add probe photon shot noise through the detector gain.
    pub shot: bool,
}

impl NoiseLevels {
    pub const NONE: NoiseLevels = NoiseLevels { nev: 0.0, shot: false };

    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self { nev: config.nev, shot: true }
    }
}

/// Chebyshev interpolant on [a, b].
#[derive(Debug, Clone)]
struct Chebyshev {
    a: f64,
    b: f64,
    coeffs: Vec<f64>,
}

impl Chebyshev {
    fn fit(a: f64, b: f64, m: usize, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<Self> {
        let values: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|k| {
                let x = (std::f64::consts::PI * (k as f64 + 0.5) / m as f64).cos();
                f(0.5 * (a + b) + 0.5 * (b - a) * x)
            })
            .collect::<Result<_>>()?;
        let coeffs = (0..m)
            .map(|j| {
                let s: f64 = values
                    .iter()
                    .enumerate()
                    .map(|(k, v)| v * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / m as f64).cos())
                    .sum();
                2.0 * s / m as f64
            })
            .collect();
        Ok(Self { a, b, coeffs })
    }

    fn eval(&self, x: f64) -> f64 {
        let u = (2.0 * x - self.a - self.b) / (self.b - self.a);
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let b0 = 2.0 * u * b1 - b2 + c;
            b2 = b1;
            b1 = b0;
        }
        u * b1 - b2 + 0.5 * self.coeffs[0]
    }
}

/// Deterministic part of the photovoltage for one calibration field.
#[derive(Debug, Clone)]
pub struct TraceModel {
    config: ExperimentConfig,
    omega_s: f64,
    im_rho: ImRho,
    mean_transmission: f64,
}

#[derive(Debug, Clone)]
enum ImRho {
    Constant(f64),
    Interpolated(Chebyshev),
}

impl TraceModel {
    pub fn new(config: &ExperimentConfig, e_cal: f64, delta_s: f64) -> Result<Self> {
        config.validate()?;
        if !(config.window_ms > 0.0) {
            return Err(Error::validation("window_ms", "must be positive"));
        }
        if e_cal < 0.0 || !e_cal.is_finite() {
            return Err(Error::Parameter("calibration field must be nonnegative".into()));
        }
        let omega_s = config.mu_mw * e_cal / CONSTANTS.hbar;
        let limit = 0.1 * config.omega_l.abs();
        if omega_s >= limit {
            return Err(Error::Adiabaticity(format!(
                "Omega_S = {omega_s:e} rad/s is not small against Omega_L = {:e} rad/s",
                config.omega_l
            )));
        }
        if delta_s.abs() >= limit {
            return Err(Error::Adiabaticity(format!(
                "delta_s = {delta_s:e} rad/s is not small against Omega_L = {:e} rad/s",
                config.omega_l
            )));
        }
        let derived = derive(config)?;
        let summary = interactions::summarize(config)?;
        let tm = TransmissionModel::new(config, &derived, &summary)?;
        let im = |omega: f64| -> Result<f64> { Ok(tm.model.with_omega_l(omega).average_on(&tm.grid)?.im) };
        let im_rho = if omega_s == 0.0 {
            ImRho::Constant(im(config.omega_l)?)
        } else {
            ImRho::Interpolated(Chebyshev::fit(config.omega_l - omega_s, config.omega_l + omega_s, 16, im)?)
        };
        let mut m = Self { config: config.clone(), omega_s, im_rho, mean_transmission: 0.0 };
        let od = 0.5 * (config.od_start + config.od_end);
        m.mean_transmission = m.transmission(od, config.omega_l)?;
        Ok(m)
    }

    pub fn omega_s(&self) -> f64 {
        self.omega_s
    }

    fn transmission(&self, od: f64, omega_eff: f64) -> Result<f64> {
        let im = match &self.im_rho {
            ImRho::Constant(v) => *v,
            ImRho::Interpolated(c) => c.eval(omega_eff),
        };
        if im < -1e-9 {
            return Err(Error::UnphysicalGain { im_rho21: im });
        }
        Ok((-od * self.config.gamma_e * im / self.config.omega_p0).exp())
    }

    pub fn sample_count(&self) -> usize {
        (self.config.sample_rate * self.config.window_ms * 1e-3).round() as usize
    }

    /// Noise-free photovoltage.
    pub fn clean(&self, delta_s: f64, phi0: f64) -> Result<Vec<f64>> {
        let c = &self.config;
        let n = self.sample_count();
        let volts_per_t = c.pd_gain * c.probe_power;
        (0..n)
            .map(|i| {
                let t = i as f64 / c.sample_rate;
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                let od = c.od_start + (c.od_end - c.od_start) * frac;
                let phase = delta_s * t + phi0;
                let field = Complex64::new(c.omega_l, 0.0) + Complex64::from_polar(self.omega_s, -phase);
                Ok(volts_per_t * self.transmission(od, field.norm())?)
            })
            .collect()
    }

    /// Per-sample standard deviation of the white noise.
    pub fn noise_sigma(&self, noise: &NoiseLevels) -> f64 {
        let c = &self.config;
        let mut psd = noise.nev * noise.nev;
        if noise.shot {
            let omega_probe = TWO_PI * CONSTANTS.c / c.lambda_p;
            let shot = 2.0 * c.probe_power * self.mean_transmission * CONSTANTS.hbar * omega_probe;
            psd += c.pd_gain * c.pd_gain * shot;
        }
        (psd * 0.5 * c.sample_rate).sqrt()
    }

    pub fn trace(&self, clean: &[f64], delta_s: f64, phi0: f64, noise: &NoiseLevels, seed: u64) -> TimeTrace {
        let sigma = self.noise_sigma(noise);
        let mut samples = clean.to_vec();
        if sigma > 0.0 {
            add_white_noise(&mut samples, sigma, seed);
        }
        TimeTrace {
            sample_rate: self.config.sample_rate,
            samples,
            meta: TraceMeta {
                seed,
                e_cal: self.omega_s * CONSTANTS.hbar / self.config.mu_mw,
                delta_s,
                phi0,
                window_ms: self.config.window_ms,
            },
        }
    }
}

fn add_white_noise(samples: &mut [f64], sigma: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    for s in samples.iter_mut() {
        *s += normal.sample(&mut rng);
    }
}

pub fn synthesize_trace(
    config: &ExperimentConfig,
    e_cal: f64,
    delta_s: f64,
    phi0: f64,
    noise: &NoiseLevels,
    seed: u64,
) -> Result<TimeTrace> {
    let model = TraceModel::new(config, e_cal, delta_s)?;
    let clean = model.clean(delta_s, phi0)?;
    Ok(model.trace(&clean, delta_s, phi0, noise, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Rectangular,
    Hann,
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rectangular" | "rect" | "boxcar" => Ok(Window::Rectangular),
            "hann" | "hanning" => Ok(Window::Hann),
            other => Err(Error::Parameter(format!("unknown window `{other}`"))),
        }
    }
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (TWO_PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }

    /// Bins on either side of a tone that hold its main lobe.
    fn lobe(self) -> usize {
        match self {
            Window::Rectangular => 0,
            Window::Hann => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Detrend {
    None,
    Mean,
    Linear,
    Quadratic,
}

/// How the raw periodogram is scaled to V/√Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Calibration {
    /// Equivalent-noise-bandwidth scaling, exact for any window.
    Analytic,
    /// Scale chosen so that white noise at this NEV (V/√Hz) reads back as
    /// a flat floor at that level.
    Nev(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSpectrum {
    pub freqs: Vec<f64>,
    /// Single-sided amplitude spectral density, V/√Hz.
    pub asd: Vec<f64>,
    /// Factor applied to the raw DFT magnitude.
    pub window_correction: f64,
    pub window: Window,
    pub bin_width: f64,
}

impl AmplitudeSpectrum {
    pub fn bin_of(&self, freq: f64) -> usize {
        ((freq / self.bin_width).round() as usize).min(self.freqs.len() - 1)
    }

    /// Mean power-averaged ASD over [lo, hi] Hz.
    pub fn band_floor(&self, lo: f64, hi: f64) -> f64 {
        let sel: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.asd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, a)| a * a)
            .collect();
        if sel.is_empty() {
            return 0.0;
        }
        (sel.iter().sum::<f64>() / sel.len() as f64).sqrt()
    }

    /// Sum of PSD × bin width over all bins: mean power of the windowed
    /// signal.
    pub fn total_power(&self) -> f64 {
        self.asd.iter().map(|a| a * a).sum::<f64>() * self.bin_width
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,asd\n");
        for (f, a) in self.freqs.iter().zip(&self.asd) {
            out.push_str(&format!("{f:e},{a:e}\n"));
        }
        out
    }
}

fn detrended(samples: &[f64], detrend: Detrend) -> Vec<f64> {
    let order = match detrend {
        Detrend::None => return samples.to_vec(),
        Detrend::Mean => 0,
        Detrend::Linear => 1,
        Detrend::Quadratic => 2,
    };
    // Gram–Schmidt on 1, x, x² over the sample positions, x in [−1, 1].
    let n = samples.len();
    let x: Vec<f64> = (0..n).map(|i| if n > 1 { 2.0 * i as f64 / (n - 1) as f64 - 1.0 } else { 0.0 }).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in 0..=order {
        let mut v: Vec<f64> = x.iter().map(|t| t.powi(p)).collect();
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(b).for_each(|(a, b)| *a -= c * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut out = samples.to_vec();
    for b in &basis {
        let c: f64 = out.iter().zip(b).map(|(a, b)| a * b).sum();
        out.iter_mut().zip(b).for_each(|(a, b)| *a -= c * b);
    }
    out
}

/// One-sided periodogram |X_k|² with DC and Nyquist counted once.
fn periodogram(x: &[f64], w: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().zip(w).map(|(a, b)| Complex64::new(a * b, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (0..=n / 2)
        .map(|k| {
            let p = buf[k].norm_sqr();
            if k == 0 || (n.is_multiple_of(2) && k == n / 2) { p } else { 2.0 * p }
        })
        .collect()
}

const NEV_REFERENCE_TRACES: u64 = 64;
const NEV_REFERENCE_SEED: u64 = 0x6e65_765f_6361_6c69;

/// Raw-periodogram mean over white-noise traces of unit PSD, used to turn a
/// known NEV into an amplitude correction.
fn nev_reference_gain(n: usize, sample_rate: f64, window: Window) -> f64 {
    let w = window.coefficients(n);
    let sigma = (0.5 * sample_rate).sqrt();
    let total: f64 = (0..NEV_REFERENCE_TRACES)
        .into_par_iter()
        .map(|s| {
            let mut x = vec![0.0; n];
            add_white_noise(&mut x, sigma, NEV_REFERENCE_SEED.wrapping_add(s));
            let p = periodogram(&x, &w);
            // Interior bins only: DC and Nyquist have different statistics.
            let inner = &p[1..p.len() - 1];
            inner.iter().sum::<f64>() / inner.len() as f64
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    total / NEV_REFERENCE_TRACES as f64
}

pub fn spectral_density(
    trace: &TimeTrace,
    window: Window,
    detrend: Detrend,
    calibration: Calibration,
) -> Result<AmplitudeSpectrum> {
    let n = trace.samples.len();
    if n < 4 {
        return Err(Error::Parameter("trace needs at least four samples".into()));
    }
    let fs = trace.sample_rate;
    let w = window.coefficients(n);
    let x = detrended(&trace.samples, detrend);
    let p = periodogram(&x, &w);
    let analytic = 1.0 / (fs * w.iter().map(|v| v * v).sum::<f64>());
    let power_scale = match calibration {
        Calibration::Analytic => analytic,
        Calibration::Nev(nev) => {
            if !(nev > 0.0) {
                return Err(Error::Parameter("NEV must be positive".into()));
            }
            // A unit-PSD reference reads `g` in raw units, so dividing by g
            // maps white noise at any level onto its true PSD.
            1.0 / nev_reference_gain(n, fs, window)
        }
    };
    let bin_width = fs / n as f64;
    Ok(AmplitudeSpectrum {
        freqs: (0..p.len()).map(|k| k as f64 * bin_width).collect(),
        asd: p.iter().map(|v| (v * power_scale).sqrt()).collect(),
        window_correction: power_scale.sqrt(),
        window,
        bin_width,
    })
}

/// Peak amplitude of an on-bin tone at `freq`, from the power in its main
/// lobe.
pub fn tone_amplitude(spec: &AmplitudeSpectrum, freq: f64) -> f64 {
    let k = spec.bin_of(freq);
    let lobe = spec.window.lobe();
    let lo = k.saturating_sub(lobe).max(1).min(k);
    let hi = (k + lobe).min(spec.asd.len() - 1);
    let power: f64 = spec.asd[lo..=hi].iter().map(|a| a * a).sum::<f64>() * spec.bin_width;
    (2.0 * power).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Responsivity {
    pub through_origin: LineFit,
    pub free: LineFit,
    /// Through-origin slope in V per (V/m).
    pub r_h: f64,
    /// Same slope in mV per (μV/cm).
    pub r_h_mv_per_uv_cm: f64,
}

fn r_squared(x: &[f64], y: &[f64], slope: f64, intercept: f64) -> f64 {
    let ym = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ym).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 { 1.0 } else { 0.0 }
    } else {
        1.0 - ss_res / ss_tot
    }
}

/// Straight-line fits of tone amplitude against calibration field.
pub fn responsivity(points: &[(f64, f64)]) -> Result<Responsivity> {
    if points.len() < 3 {
        return Err(Error::Parameter("responsivity needs at least three points".into()));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (xmin, xmax) = x.iter().fold((f64::INFINITY, 0f64), |(a, b), &v| (a.min(v.abs()), b.max(v.abs())));
    if !(xmin > 0.0) || xmax < 10.0 * xmin * (1.0 - 1e-9) {
        return Err(Error::Parameter("calibration fields must be positive and span a decade".into()));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    if sxx == 0.0 {
        return Err(Error::Fit { message: "singular design".into(), residual_rms: f64::NAN });
    }
    let s0 = sxy / sxx;
    let n = x.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let ym = y.iter().sum::<f64>() / n;
    let dxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    if dxx <= 1e-30 * sxx {
        return Err(Error::Fit { message: "singular design".into(), residual_rms: f64::NAN });
    }
    let s1 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum::<f64>() / dxx;
    let b1 = ym - s1 * xm;
    Ok(Responsivity {
        through_origin: LineFit { slope: s0, intercept: 0.0, r_squared: r_squared(&x, &y, s0, 0.0) },
        free: LineFit { slope: s1, intercept: b1, r_squared: r_squared(&x, &y, s1, b1) },
        r_h: s0,
        r_h_mv_per_uv_cm: s0 * 1e-4 * 1e3,
    })
}

/// Tone amplitude at δ_s for each calibration field, from `averages`
/// traces per field averaged in the time domain at a fixed beat phase.
pub fn calibration_points(
    config: &ExperimentConfig,
    fields: &[f64],
    noise: &NoiseLevels,
    averages: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    let averages = averages.max(1);
    let delta_s = config.delta_s;
    fields
        .par_iter()
        .enumerate()
        .map(|(i, &e)| {
            let model = TraceModel::new(config, e, delta_s)?;
            let clean = model.clean(delta_s, 0.0)?;
            let mut acc = vec![0.0; clean.len()];
            for j in 0..averages as u64 {
                let t = model.trace(&clean, delta_s, 0.0, noise, seed.wrapping_add((i as u64) << 32).wrapping_add(j));
                acc.iter_mut().zip(&t.samples).for_each(|(a, v)| *a += v);
            }
            acc.iter_mut().for_each(|a| *a /= averages as f64);
            let mut trace = model.trace(&clean, delta_s, 0.0, &NoiseLevels::NONE, seed);
            trace.samples = acc;
            let spec = spectral_density(&trace, Window::Rectangular, Detrend::Quadratic, Calibration::Analytic)?;
            Ok((e, tone_amplitude(&spec, delta_s / TWO_PI)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivitySpectrum {
    pub freqs: Vec<f64>,
    /// Field amplitude spectral density, V m⁻¹ Hz⁻½.
    pub field_asd: Vec<f64>,
}

impl SensitivitySpectrum {
    pub fn band_floor(&self, lo: f64, hi: f64) -> f64 {
        let sel: Vec<f64> = self
            .freqs
            .iter()
            .zip(&self.field_asd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, a)| a * a)
            .collect();
        if sel.is_empty() {
            return 0.0;
        }
        (sel.iter().sum::<f64>() / sel.len() as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_hz,field_asd_v_per_m_rthz\n");
        for (f, a) in self.freqs.iter().zip(&self.field_asd) {
            out.push_str(&format!("{f:e},{a:e}\n"));
        }
        out
    }
}

pub fn sensitivity_spectrum(asd: &AmplitudeSpectrum, r_h: f64) -> Result<SensitivitySpectrum> {
    if !(r_h > 0.0) {
        return Err(Error::Parameter("responsivity must be positive".into()));
    }
    Ok(SensitivitySpectrum { freqs: asd.freqs.clone(), field_asd: asd.asd.iter().map(|a| a / r_h).collect() })
}

/// E_min = S / √T′.
pub fn min_detectable_field(s: f64, t_prime: f64) -> Result<f64> {
    if !(s > 0.0) || !(t_prime > 0.0) {
        return Err(Error::Parameter("sensitivity and integration time must be positive".into()));
    }
    Ok(s / t_prime.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EminPoint {
    pub traces: usize,
    /// Wall-clock integration time at the cycle rate, s.
    pub t_prime: f64,
    /// V/m.
    pub e_min: f64,
}

/// Averages `n` noise-only traces for each count, reads the residual field
/// floor over [band.0, band.1] Hz and converts it to E_min at T′ = n/rep rate.
pub fn empirical_emin(
    config: &ExperimentConfig,
    noise: &NoiseLevels,
    r_h: f64,
    counts: &[usize],
    band: (f64, f64),
    seed: u64,
) -> Result<Vec<EminPoint>> {
    if !(r_h > 0.0) {
        return Err(Error::Parameter("responsivity must be positive".into()));
    }
    let model = TraceModel::new(config, 0.0, 0.0)?;
    let n = model.sample_count();
    let sigma = model.noise_sigma(noise);
    if !(sigma > 0.0) {
        return Err(Error::Parameter("empirical E_min needs a nonzero noise level".into()));
    }
    counts
        .par_iter()
        .map(|&count| {
            if count == 0 {
                return Err(Error::Parameter("trace count must be positive".into()));
            }
            // The clean part is identical in every cycle; averaging leaves it
            // unchanged and the detrend removes it, so only noise is summed.
            let mut acc = vec![0.0; n];
            let base = seed ^ (count as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            for i in 0..count as u64 {
                let mut x = vec![0.0; n];
                add_white_noise(&mut x, sigma, base.wrapping_add(i));
                for (a, v) in acc.iter_mut().zip(&x) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= count as f64);
            let trace = TimeTrace {
                sample_rate: config.sample_rate,
                samples: acc,
                meta: TraceMeta { seed: base, e_cal: 0.0, delta_s: 0.0, phi0: 0.0, window_ms: config.window_ms },
            };
            let asd = spectral_density(&trace, Window::Rectangular, Detrend::Quadratic, Calibration::Analytic)?;
            let floor = asd.band_floor(band.0, band.1) / r_h;
            let t_prime = count as f64 / REP_RATE_HZ;
            Ok(EminPoint { traces: count, t_prime, e_min: floor * REP_RATE_HZ.sqrt() })
        })
        .collect()
}

/// Least-squares fit of y = a xᵖ in log-log space; returns (a, p).
pub fn power_law_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Fit { message: "power-law fit needs positive pairs".into(), residual_rms: f64::NAN });
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit { message: "singular design".into(), residual_rms: f64::NAN });
    }
    let p = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx;
    Ok(((my - p * mx).exp(), p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::to_nv_per_cm;

    fn sine_trace(n: usize, fs: f64, f: f64, a: f64) -> TimeTrace {
        let samples = (0..n).map(|i| a * (TWO_PI * f * i as f64 / fs + 0.3).sin()).collect();
        TimeTrace {
            sample_rate: fs,
            samples,
            meta: TraceMeta { seed: 0, e_cal: 0.0, delta_s: 0.0, phi0: 0.0, window_ms: n as f64 / fs * 1e3 },
        }
    }

    fn noise_trace(n: usize, fs: f64, nev: f64, seed: u64) -> TimeTrace {
        let mut t = sine_trace(n, fs, 0.0, 0.0);
        add_white_noise(&mut t.samples, nev * (0.5 * fs).sqrt(), seed);
        t
    }

    #[test]
    fn sine_amplitude_recovered() {
        for window in [Window::Rectangular, Window::Hann] {
            for cal in [Calibration::Analytic, Calibration::Nev(1e-6)] {
                let t = sine_trace(2000, 2e6, 10e3, 0.37);
                let s = spectral_density(&t, window, Detrend::None, cal).unwrap();
                let a = tone_amplitude(&s, 10e3);
                assert!((a - 0.37).abs() < 0.005 * 0.37, "{window:?} {cal:?}: {a}");
            }
        }
    }

    #[test]
    fn white_noise_floor_reads_nev() {
        let nev = 1e-6;
        for window in [Window::Rectangular, Window::Hann] {
            let floors: Vec<f64> = (0..50)
                .map(|seed| {
                    let t = noise_trace(2000, 2e6, nev, seed);
                    let s = spectral_density(&t, window, Detrend::None, Calibration::Nev(nev)).unwrap();
                    s.band_floor(1e3, 999e3)
                })
                .collect();
            let mean = floors.iter().sum::<f64>() / floors.len() as f64;
            assert!((mean - nev).abs() < 0.05 * nev, "{window:?}: {mean}");
        }
    }

    #[test]
    fn parseval_rectangular() {
        let t = noise_trace(1999, 1e6, 1e-3, 7);
        let s = spectral_density(&t, Window::Rectangular, Detrend::None, Calibration::Analytic).unwrap();
        let mean_power = t.samples.iter().map(|v| v * v).sum::<f64>() / t.samples.len() as f64;
        assert!((s.total_power() - mean_power).abs() < 1e-6 * mean_power);
        let t = noise_trace(2000, 1e6, 1e-3, 8);
        let s = spectral_density(&t, Window::Rectangular, Detrend::None, Calibration::Analytic).unwrap();
        let mean_power = t.samples.iter().map(|v| v * v).sum::<f64>() / t.samples.len() as f64;
        assert!((s.total_power() - mean_power).abs() < 1e-6 * mean_power);
    }

    #[test]
    fn zero_trace_gives_zero_spectrum() {
        let t = sine_trace(256, 1e5, 0.0, 0.0);
        let s = spectral_density(&t, Window::Hann, Detrend::Quadratic, Calibration::Nev(1e-6)).unwrap();
        assert!(s.asd.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn unknown_window_rejected() {
        assert!(matches!("kaiser".parse::<Window>(), Err(Error::Parameter(_))));
    }

    #[test]
    fn chebyshev_reproduces_smooth_function() {
        let c = Chebyshev::fit(1.0, 2.0, 16, |x| Ok((3.0 * x).sin())).unwrap();
        for i in 0..=20 {
            let x = 1.0 + i as f64 / 20.0;
            assert!((c.eval(x) - (3.0 * x).sin()).abs() < 1e-10);
        }
    }

    fn reference() -> ExperimentConfig {
        ExperimentConfig::reference()
    }

    #[test]
    fn traces_are_deterministic() {
        let cfg = reference();
        let noise = NoiseLevels::from_config(&cfg);
        let a = synthesize_trace(&cfg, 1e-3, cfg.delta_s, 0.0, &noise, 42).unwrap();
        let b = synthesize_trace(&cfg, 1e-3, cfg.delta_s, 0.0, &noise, 42).unwrap();
        assert_eq!(a.samples.len(), 2000);
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = synthesize_trace(&cfg, 1e-3, cfg.delta_s, 0.0, &noise, 43).unwrap();
        assert_ne!(a.samples, c.samples);
        let sa = spectral_density(&a, Window::Rectangular, Detrend::Quadratic, Calibration::Nev(cfg.nev)).unwrap();
        let sb = spectral_density(&b, Window::Rectangular, Detrend::Quadratic, Calibration::Nev(cfg.nev)).unwrap();
        assert!(sa.asd.iter().zip(&sb.asd).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn signal_rises_and_oscillates() {
        let cfg = reference();
        let t = synthesize_trace(&cfg, 2e-3, cfg.delta_s, 0.0, &NoiseLevels::NONE, 0).unwrap();
        let n = t.samples.len();
        let head = t.samples[..100].iter().sum::<f64>() / 100.0;
        let tail = t.samples[n - 100..].iter().sum::<f64>() / 100.0;
        assert!(tail > head);
        let s = spectral_density(&t, Window::Rectangular, Detrend::Quadratic, Calibration::Analytic).unwrap();
        let k = s.bin_of(cfg.delta_s / TWO_PI);
        assert!(s.asd[k] > 10.0 * s.asd[k + 5]);
    }

    #[test]
    fn no_field_no_peak() {
        let cfg = reference();
        let noise = NoiseLevels::from_config(&cfg);
        let model = TraceModel::new(&cfg, 0.0, cfg.delta_s).unwrap();
        let clean = model.clean(cfg.delta_s, 0.0).unwrap();
        let f = cfg.delta_s / TWO_PI;
        let (mut peak, mut floor) = (0.0, 0.0);
        for seed in 0..100 {
            let t = model.trace(&clean, cfg.delta_s, 0.0, &noise, seed);
            let s = spectral_density(&t, Window::Rectangular, Detrend::Quadratic, Calibration::Nev(cfg.nev)).unwrap();
            peak += s.asd[s.bin_of(f)].powi(2);
            floor += s.band_floor(f - 50e3, f + 50e3).powi(2);
        }
        let ratio_db = 10.0 * (peak / floor).log10();
        assert!(ratio_db < 3.0, "{ratio_db} dB");
    }

    #[test]
    fn amplitude_is_linear_in_field() {
        let cfg = reference();
        let amp = |e: f64| {
            let t = synthesize_trace(&cfg, e, cfg.delta_s, 0.0, &NoiseLevels::NONE, 0).unwrap();
            let s = spectral_density(&t, Window::Rectangular, Detrend::Quadratic, Calibration::Analytic).unwrap();
            tone_amplitude(&s, cfg.delta_s / TWO_PI)
        };
        let (a1, a2) = (amp(1e-3), amp(2e-3));
        assert!((a2 / a1 - 2.0).abs() < 0.02, "{}", a2 / a1);
    }

    #[test]
    fn large_signal_breaks_adiabaticity() {
        let cfg = reference();
        let e = 0.2 * cfg.omega_l * CONSTANTS.hbar / cfg.mu_mw;
        assert!(matches!(synthesize_trace(&cfg, e, cfg.delta_s, 0.0, &NoiseLevels::NONE, 0), Err(Error::Adiabaticity(_))));
        assert!(matches!(
            synthesize_trace(&cfg, 0.0, cfg.omega_l, 0.0, &NoiseLevels::NONE, 0),
            Err(Error::Adiabaticity(_))
        ));
    }

    #[test]
    fn responsivity_fits() {
        let pts: Vec<(f64, f64)> = [1e-4, 3e-4, 1e-3].iter().map(|&e| (e, 0.23 * e)).collect();
        let r = responsivity(&pts).unwrap();
        assert!((r.r_h - 0.23).abs() < 1e-12 && (r.through_origin.r_squared - 1.0).abs() < 1e-12);
        assert!((r.r_h_mv_per_uv_cm - 0.023).abs() < 1e-12);
        assert!(responsivity(&[(1.0, 1.0), (1.0, 1.0), (1.0, 1.0)]).is_err());
    }

    #[test]
    fn responsivity_round_trip_from_traces() {
        let cfg = reference();
        let noise = NoiseLevels::from_config(&cfg);
        let fields = [1e-3, 2e-3, 4e-3, 7e-3, 1e-2];
        let pts = calibration_points(&cfg, &fields, &noise, 100, 3).unwrap();
        let r = responsivity(&pts).unwrap();
        assert!(r.through_origin.r_squared > 0.999, "{:?}", r);
        let exact = calibration_points(&cfg, &fields, &NoiseLevels::NONE, 1, 0).unwrap();
        let r0 = responsivity(&exact).unwrap();
        assert!((r.r_h - r0.r_h).abs() < 0.02 * r0.r_h);
    }

    #[test]
    fn full_chain_floor_matches_readout_budget() {
        let cfg = reference();
        let op = crate::noise_budget::OperatingPoint::evaluate(&cfg).unwrap();
        let readout = op.components.nef_pd.hypot(op.components.nef_ph);
        let exact = calibration_points(&cfg, &[1e-3, 3e-3, 1e-2], &NoiseLevels::NONE, 1, 0).unwrap();
        let r_h = responsivity(&exact).unwrap().r_h;
        let noise = NoiseLevels::from_config(&cfg);
        let model = TraceModel::new(&cfg, 0.0, cfg.delta_s).unwrap();
        let clean = model.clean(cfg.delta_s, 0.0).unwrap();
        let mut power = 0.0;
        for seed in 0..20 {
            let t = model.trace(&clean, cfg.delta_s, 0.0, &noise, seed);
            let a = spectral_density(&t, Window::Rectangular, Detrend::Quadratic, Calibration::Nev(cfg.nev)).unwrap();
            power += sensitivity_spectrum(&a, r_h).unwrap().band_floor(10e3, 300e3).powi(2);
        }
        let floor = (power / 20.0).sqrt();
        assert!((floor - readout).abs() < 0.15 * readout, "{} vs {}", to_nv_per_cm(floor), to_nv_per_cm(readout));
    }

    #[test]
    fn sensitivity_floor_is_nev_over_rh() {
        let asd = AmplitudeSpectrum {
            freqs: vec![0.0, 1.0, 2.0],
            asd: vec![0.6e-6; 3],
            window_correction: 1.0,
            window: Window::Rectangular,
            bin_width: 1.0,
        };
        let s = sensitivity_spectrum(&asd, 2.0).unwrap();
        assert!(s.field_asd.iter().all(|&v| (v - 0.3e-6).abs() < 1e-20));
        assert!(sensitivity_spectrum(&asd, 0.0).is_err());
    }

    #[test]
    fn analytic_emin() {
        let s = crate::quantities::from_nv_per_cm(10.0);
        assert_eq!(min_detectable_field(s, 1.0).unwrap(), s);
        let e = to_nv_per_cm(min_detectable_field(s, 420.0).unwrap()) * 1e3;
        assert!((e - 488.0).abs() < 0.5, "{e} pV/cm");
        let ratio = min_detectable_field(s, 4.0).unwrap() / min_detectable_field(s, 16.0).unwrap();
        assert!((ratio - 2.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_emin_scales_as_inverse_root() {
        let cfg = reference();
        let noise = NoiseLevels::from_config(&cfg);
        let counts = [1, 10, 100, 1000];
        let pts = empirical_emin(&cfg, &noise, 0.234, &counts, (10e3, 300e3), 5).unwrap();
        let x: Vec<f64> = pts.iter().map(|p| p.traces as f64).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.e_min).collect();
        let (_, p) = power_law_fit(&x, &y).unwrap();
        assert!((p + 0.5).abs() < 0.05, "{p}");
    }
}
