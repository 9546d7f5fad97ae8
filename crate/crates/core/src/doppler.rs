//! Maxwell–Boltzmann averaging of the probe coherence and Beer–Lambert
//! transmission.

use std::f64::consts::PI;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::bloch::{steady_state, Drive, LevelShifts, Liouvillian, Rates};
use crate::error::{Error, Result};
use crate::quantities::{derive, ExperimentConfig};

const GL_ORDER: usize = 16;
/// Absolute tolerance on ρ̄₂₁ for panel refinement.
const TOLERANCE: f64 = 1e-9;
/// Disagreement at which refinement gives up.
const FAILURE: f64 = 1e-8;
const MAX_DEPTH: u32 = 24;

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * p - pm1) / (x * x - 1.0);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(GL_ORDER))
}

/// Quadrature nodes over ±truncation·u with Maxwell–Boltzmann weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub truncation: f64,
}

impl VelocityGrid {
    /// Composite 16-point Gauss–Legendre rule on the given panel edges.
    pub fn on_panels(u: f64, truncation: f64, panels: &[(f64, f64)]) -> Self {
        let (x, w) = gl16();
        let mut nodes = Vec::with_capacity(panels.len() * GL_ORDER);
        let mut weights = Vec::with_capacity(panels.len() * GL_ORDER);
        let norm = 1.0 / (u * PI.sqrt());
        for &(a, b) in panels {
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            for (xi, wi) in x.iter().zip(w) {
                let v = mid + half * xi;
                nodes.push(v);
                weights.push(half * wi * norm * (-(v / u).powi(2)).exp());
            }
        }
        Self { nodes, weights, truncation }
    }

    /// `panels` equal panels across ±truncation·u.
    pub fn uniform(u: f64, truncation: f64, panels: usize) -> Self {
        let edges = uniform_panels(u * truncation, panels);
        Self::on_panels(u, truncation, &edges)
    }

    pub fn mass(&self) -> f64 {
        neumaier(self.weights.iter().copied())
    }
}

fn uniform_panels(vmax: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = 2.0 * vmax / panels as f64;
    (0..panels)
        .map(|i| (-vmax + h * i as f64, -vmax + h * (i + 1) as f64))
        .collect()
}

fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for x in values {
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

fn neumaier_complex(values: impl Iterator<Item = Complex64>) -> Complex64 {
    let values: Vec<Complex64> = values.collect();
    Complex64::new(
        neumaier(values.iter().map(|z| z.re)),
        neumaier(values.iter().map(|z| z.im)),
    )
}

/// Single-velocity steady-state coherence as a function of v, plus the
/// velocity distribution it is averaged over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceModel {
    pub drive: Drive,
    pub rates: Rates,
    pub shifts: LevelShifts,
    /// Most probable speed, m/s.
    pub u: f64,
    pub truncation: f64,
}

impl CoherenceModel {
    pub fn new(
        config: &ExperimentConfig,
        shifts: LevelShifts,
        gamma_r_total: f64,
        omega_l_eff: f64,
    ) -> Result<Self> {
        if !(config.temp_a >= 0.0) {
            return Err(Error::validation("temp_a", "must be nonnegative"));
        }
        let derived = derive(config)?;
        let mut drive = Drive::from_config(config);
        drive.omega_l = omega_l_eff;
        Ok(Self {
            drive,
            rates: Rates::from_config(config, gamma_r_total),
            shifts,
            u: derived.u,
            truncation: config.doppler_truncation,
        })
    }

    pub fn with_omega_l(mut self, omega_l: f64) -> Self {
        self.drive.omega_l = omega_l;
        self
    }

    pub fn with_omega_p(mut self, omega_p: f64) -> Self {
        self.drive.omega_p = omega_p;
        self
    }

    pub fn with_delta_p(mut self, delta_p: f64) -> Self {
        self.drive.delta_p = delta_p;
        self
    }

    pub fn rho21_at(&self, v: f64) -> Result<Complex64> {
        let h = self.drive.hamiltonian(&self.shifts, v, 0.0);
        let l = Liouvillian::new(&h, &self.rates)?;
        Ok(steady_state(&l)?.rho21())
    }

    fn panel(&self, a: f64, b: f64) -> Result<Complex64> {
        let (x, w) = gl16();
        let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
        let norm = 1.0 / (self.u * PI.sqrt());
        let mut terms = Vec::with_capacity(GL_ORDER);
        for (xi, wi) in x.iter().zip(w) {
            let v = mid + half * xi;
            let weight = half * wi * norm * (-(v / self.u).powi(2)).exp();
            terms.push(self.rho21_at(v)? * weight);
        }
        Ok(neumaier_complex(terms.into_iter()))
    }

    /// Velocity scale of the narrowest feature of ρ₂₁(v): the one-photon
    /// line (Γ/2 over k_P) or the multi-photon lines (Rydberg dephasing over
    /// the residual wave-vector mismatch).
    fn feature_width(&self) -> f64 {
        let d = &self.drive;
        let one_photon = 0.5 * self.rates.gamma_e / d.k_p;
        let mismatch = (d.k_p - d.k_c).abs().max((d.k_p - d.k_c + d.k_l).abs()).max(1.0);
        let floor = (self.rates.dephasing + 0.5 * self.rates.gamma_r.max(self.rates.gamma_rp))
            .max(1e-4 * self.rates.gamma_e);
        let multi = floor / mismatch;
        let w = one_photon.min(multi);
        if w > 0.0 { w } else { f64::MIN_POSITIVE }
    }

    /// Adaptive panel set: uniform start resolving the narrowest feature,
    /// then every panel whose halves disagree with it is split again.
    pub fn grid(&self) -> Result<VelocityGrid> {
        Ok(self.refine()?.0)
    }

    fn refine(&self) -> Result<(VelocityGrid, Complex64)> {
        let vmax = self.truncation * self.u;
        let start = ((2.0 * vmax / self.feature_width()).ceil() as usize).clamp(4, 1 << 17);
        let start = start.next_power_of_two();
        let edges = uniform_panels(vmax, start);
        let coarse: Vec<Complex64> = edges
            .par_iter()
            .map(|&(a, b)| self.panel(a, b))
            .collect::<Result<_>>()?;
        let mut pending: Vec<(f64, f64, Complex64)> = edges
            .into_iter()
            .zip(coarse)
            .map(|((a, b), c)| (a, b, c))
            .collect();
        let mut accepted: Vec<(f64, f64, Complex64)> = Vec::new();
        for depth in 0..=MAX_DEPTH {
            if pending.is_empty() {
                break;
            }
            let halves: Vec<(Complex64, Complex64)> = pending
                .par_iter()
                .map(|&(a, b, _)| {
                    let m = 0.5 * (a + b);
                    Ok((self.panel(a, m)?, self.panel(m, b)?))
                })
                .collect::<Result<_>>()?;
            let mut next = Vec::new();
            for ((a, b, coarse), (left, right)) in pending.into_iter().zip(halves) {
                let m = 0.5 * (a + b);
                let change = (left + right - coarse).norm();
                let share = (b - a) / (2.0 * vmax);
                if change <= (TOLERANCE * share).max(1e-16) {
                    accepted.push((a, m, left));
                    accepted.push((m, b, right));
                } else if depth == MAX_DEPTH {
                    if change > FAILURE * share {
                        return Err(Error::Accuracy { change });
                    }
                    accepted.push((a, m, left));
                    accepted.push((m, b, right));
                } else {
                    next.push((a, m, left));
                    next.push((m, b, right));
                }
            }
            pending = next;
        }
        accepted.sort_by(|x, y| x.0.total_cmp(&y.0));
        let panels: Vec<(f64, f64)> = accepted.iter().map(|&(a, b, _)| (a, b)).collect();
        let grid = VelocityGrid::on_panels(self.u, self.truncation, &panels);
        let value = neumaier_complex(accepted.into_iter().map(|p| p.2));
        Ok((grid, value))
    }

    /// ρ̄₂₁ on a fixed grid.
    pub fn average_on(&self, grid: &VelocityGrid) -> Result<Complex64> {
        if self.u == 0.0 {
            return self.rho21_at(0.0);
        }
        let terms: Vec<Complex64> = grid
            .nodes
            .par_iter()
            .zip(&grid.weights)
            .map(|(&v, &w)| Ok(self.rho21_at(v)? * w))
            .collect::<Result<_>>()?;
        Ok(neumaier_complex(terms.into_iter()))
    }

    /// ρ̄₂₁ with adaptive refinement.
    pub fn average(&self) -> Result<Complex64> {
        if self.u == 0.0 {
            return self.rho21_at(0.0);
        }
        Ok(self.refine()?.1)
    }
}

/// Velocity-averaged ρ̄₂₁ with the local microwave Rabi frequency set to
/// `omega_l_eff`.
pub fn averaged_coherence(
    config: &ExperimentConfig,
    shifts: LevelShifts,
    gamma_r_total: f64,
    omega_l_eff: f64,
) -> Result<Complex64> {
    CoherenceModel::new(config, shifts, gamma_r_total, omega_l_eff)?.average()
}

/// Probe transmission exp(−D Γ Im ρ̄₂₁ / Ω_P).
pub fn transmission(d_opt: f64, gamma_e: f64, omega_p: f64, rho21bar: Complex64) -> Result<f64> {
    if !(omega_p > 0.0) {
        return Err(Error::Domain(format!("probe Rabi frequency must be positive, got {omega_p}")));
    }
    if rho21bar.im < -1e-9 {
        return Err(Error::UnphysicalGain { im_rho21: rho21bar.im });
    }
    Ok((-(d_opt * gamma_e / omega_p) * rho21bar.im).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantities::TWO_PI;

    fn reference_model(temp: f64) -> CoherenceModel {
        let cfg = ExperimentConfig::reference().with_temperature(temp);
        CoherenceModel::new(&cfg, LevelShifts::default(), cfg.gamma0 + TWO_PI * 3.0e6, cfg.omega_l)
            .unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(16);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        for p in [2, 10, 30] {
            let got: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((got - 2.0 / (p as f64 + 1.0)).abs() < 1e-13, "x^{p}");
        }
    }

    #[test]
    fn grid_mass_is_gaussian_mass() {
        // Oracle: fine trapezoid of the normalized Gaussian on ±5.
        let n = 200_001;
        let h = 10.0 / (n - 1) as f64;
        let trap: f64 = (0..n)
            .map(|i| {
                let x = -5.0 + h * i as f64;
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                w * (-x * x).exp() / PI.sqrt()
            })
            .sum::<f64>()
            * h;
        let grid = VelocityGrid::uniform(0.2, 5.0, 16);
        assert!((grid.mass() - trap).abs() < 1e-10);
        let adaptive = reference_model(200e-6).grid().unwrap();
        assert!((adaptive.mass() - trap).abs() < 1e-10);
    }

    #[test]
    fn zero_temperature_uses_resting_atom() {
        let m = reference_model(0.0);
        assert_eq!(m.average().unwrap(), m.rho21_at(0.0).unwrap());
    }

    #[test]
    fn cold_average_matches_dense_trapezoid() {
        let m = reference_model(200e-6);
        let avg = m.average().unwrap();
        let n = 20_001;
        let vmax = 5.0 * m.u;
        let h = 2.0 * vmax / (n - 1) as f64;
        let mut sum = Complex64::new(0.0, 0.0);
        for i in 0..n {
            let v = -vmax + h * i as f64;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            sum += m.rho21_at(v).unwrap() * (w * (-(v / m.u).powi(2)).exp());
        }
        let trap = sum * (h / (m.u * PI.sqrt()));
        assert!((avg - trap).norm() < 1e-8, "{avg} vs {trap}");
    }

    #[test]
    fn wider_truncation_changes_nothing() {
        let m5 = reference_model(200e-6);
        let m8 = CoherenceModel { truncation: 8.0, ..m5 };
        let diff = (m5.average().unwrap() - m8.average().unwrap()).norm();
        assert!(diff < 1e-10, "{diff}");
    }

    #[test]
    fn transmission_limits() {
        let z = Complex64::new(0.0, 0.3);
        assert_eq!(transmission(0.0, 1.0, 1.0, z).unwrap(), 1.0);
        // Weak resonant two-level probe: Im ρ₂₁ → Ω_P/Γ.
        let gamma = 3.8e7;
        let omega_p = 1e-3 * gamma;
        let rho = Complex64::new(0.0, omega_p / gamma);
        let t = transmission(0.46, gamma, omega_p, rho).unwrap();
        assert!((t - 0.631).abs() < 1e-3);
        assert!((t - (-0.46f64).exp()).abs() < 1e-12);
        assert!(matches!(
            transmission(0.3, gamma, omega_p, Complex64::new(0.0, -1e-6)),
            Err(Error::UnphysicalGain { .. })
        ));
        let a = transmission(0.2, gamma, omega_p, rho).unwrap();
        let b = transmission(0.3, gamma, omega_p, rho).unwrap();
        assert!(b < a);
    }

    #[test]
    fn two_level_weak_probe_gives_beer_lambert() {
        let mut cfg = ExperimentConfig::reference().with_temperature(0.0);
        cfg.omega_c0 = 0.0;
        cfg.omega_l = 0.0;
        cfg.omega_p0 = 1e-4 * cfg.gamma_e;
        let rho = averaged_coherence(&cfg, LevelShifts::default(), cfg.gamma0, 0.0).unwrap();
        let t = transmission(0.46, cfg.gamma_e, cfg.omega_p0, rho).unwrap();
        assert!((t - (-0.46f64).exp()).abs() < 1e-6);
    }

    fn resonant_transmission(temp: f64, coupling: bool) -> f64 {
        let mut cfg = ExperimentConfig::reference().with_temperature(temp);
        cfg.omega_l = 0.0;
        if !coupling {
            cfg.omega_c0 = 0.0;
        }
        let d = derive(&ExperimentConfig::reference()).unwrap().d_opt;
        let rho = averaged_coherence(&cfg, LevelShifts::default(), cfg.gamma0, 0.0).unwrap();
        transmission(d, cfg.gamma_e, cfg.omega_p0, rho).unwrap()
    }

    #[test]
    fn transparency_window_exists_at_all_temperatures() {
        let mut contrast = Vec::new();
        for temp in [0.0, 200e-6, 300.0] {
            let on = resonant_transmission(temp, true);
            let off = resonant_transmission(temp, false);
            assert!(on > off, "T = {temp}: {on} <= {off}");
            contrast.push(on - off);
        }
        // At fixed column density hot atoms absorb less, so the raw peak
        // transmission rises; what Doppler averaging degrades is the
        // transparency contrast.
        assert!(contrast[2] < contrast[1], "{contrast:?}");
    }
}
