//! Four-level ladder master equation.
//!
//! Levels: |1⟩ ground, |2⟩ intermediate, |3⟩ and |4⟩ the microwave-coupled
//! Rydberg pair. Density matrices are vectorized column-major, so element
//! ρ_ij sits at index `i + 4 j`. Everything is expressed in rad/s (H/ħ).

use nalgebra::{Matrix4, SMatrix, SVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quantities::{ExperimentConfig, TWO_PI};

pub type Matrix4c = Matrix4<Complex64>;
pub type Superop = SMatrix<Complex64, 16, 16>;
pub type Vec16 = SVector<Complex64, 16>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pivot ratio below which the steady-state system is treated as singular.
const DEGENERACY_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix4 {
    pub rho: Matrix4c,
}

impl DensityMatrix4 {
    /// |k⟩⟨k| with k zero-based.
    pub fn pure_level(k: usize) -> Self {
        let mut rho = Matrix4c::zeros();
        rho[(k, k)] = ONE;
        Self { rho }
    }

    pub fn ground() -> Self {
        Self::pure_level(0)
    }

    fn from_vec(v: &Vec16) -> Self {
        Self {
            rho: Matrix4c::from_column_slice(v.as_slice()),
        }
    }

    pub fn to_vec(&self) -> Vec16 {
        Vec16::from_column_slice(self.rho.as_slice())
    }

    pub fn trace(&self) -> Complex64 {
        self.rho.trace()
    }

    pub fn populations(&self) -> [f64; 4] {
        [0, 1, 2, 3].map(|k| self.rho[(k, k)].re)
    }

    /// Largest |ρ − ρ†| element.
    pub fn hermiticity_deviation(&self) -> f64 {
        (self.rho - self.rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// ρ₂₁ in the level labelling 1..4.
    pub fn rho21(&self) -> Complex64 {
        self.rho[(1, 0)]
    }

    pub fn element(&self, i: usize, j: usize) -> Complex64 {
        self.rho[(i - 1, j - 1)]
    }
}

/// Mean interaction shifts added to the Rydberg detunings, rad/s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LevelShifts {
    pub v_vdw: f64,
    pub v_vdw_prime: f64,
    pub v_dd: f64,
}

/// Fields and wave numbers entering the Hamiltonian.
///
/// A compact copy of the relevant configuration entries so that inner loops
/// (velocity classes, detuning scans) can tweak one value cheaply.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drive {
    pub omega_p: f64,
    pub omega_c: f64,
    pub omega_l: f64,
    pub omega_s: f64,
    pub delta_p: f64,
    pub k_p: f64,
    pub k_c: f64,
    pub k_l: f64,
}

impl Drive {
    pub fn from_config(config: &ExperimentConfig) -> Self {
        Self {
            omega_p: config.omega_p0,
            omega_c: config.omega_c0,
            omega_l: config.omega_l,
            omega_s: config.omega_s,
            delta_p: config.delta_p,
            k_p: TWO_PI / config.lambda_p,
            k_c: TWO_PI / config.lambda_c,
            k_l: TWO_PI / config.lambda_mw,
        }
    }

    /// Detunings (Δ₂, Δ₃, Δ₄) of an atom moving at `v` along the probe axis.
    pub fn detunings(&self, shifts: &LevelShifts, v: f64) -> [f64; 3] {
        let d2 = self.delta_p + self.k_p * v;
        let d3 = d2 + shifts.v_vdw + shifts.v_dd - self.k_c * v;
        let d4 = self.delta_p + shifts.v_dd + shifts.v_vdw_prime + (self.k_p - self.k_c + self.k_l) * v;
        [d2, d3, d4]
    }

    pub fn hamiltonian(&self, shifts: &LevelShifts, v: f64, phase: f64) -> Matrix4c {
        let [d2, d3, d4] = self.detunings(shifts, v);
        let mut h = Matrix4c::zeros();
        h[(1, 1)] = Complex64::from(-d2);
        h[(2, 2)] = Complex64::from(-d3);
        h[(3, 3)] = Complex64::from(-d4);
        let p = Complex64::from(-0.5 * self.omega_p);
        let c = Complex64::from(-0.5 * self.omega_c);
        let mw = -0.5 * (Complex64::from(self.omega_l) + self.omega_s * Complex64::from_polar(1.0, -phase));
        h[(1, 0)] = p;
        h[(0, 1)] = p.conj();
        h[(2, 1)] = c;
        h[(1, 2)] = c.conj();
        h[(3, 2)] = mw;
        h[(2, 3)] = mw.conj();
        h
    }
}

/// H/ħ in rad/s for an atom at velocity `v` and relative microwave phase
/// `phase`.
pub fn build_hamiltonian(
    config: &ExperimentConfig,
    shifts: &LevelShifts,
    v: f64,
    phase: f64,
) -> Matrix4c {
    Drive::from_config(config).hamiltonian(shifts, v, phase)
}

/// Relaxation rates of the ladder, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    /// |2⟩ → |1⟩.
    pub gamma_e: f64,
    /// |3⟩ → |2⟩.
    pub gamma_r: f64,
    /// |4⟩ → |1⟩.
    pub gamma_rp: f64,
    /// Pure dephasing of |3⟩ and |4⟩.
    pub dephasing: f64,
}

impl Rates {
    pub fn from_config(config: &ExperimentConfig, dephasing: f64) -> Self {
        Self {
            gamma_e: config.gamma_e,
            gamma_r: config.gamma_r_decay,
            gamma_rp: config.gamma_rp_decay,
            dephasing,
        }
    }

    fn check(&self) -> Result<()> {
        for (name, r) in [
            ("gamma_e", self.gamma_e),
            ("gamma_r_decay", self.gamma_r),
            ("gamma_rp_decay", self.gamma_rp),
            ("dephasing", self.dephasing),
        ] {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Domain(format!("{name} must be finite and nonnegative, got {r}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Liouvillian {
    pub l_matrix: Superop,
}

fn transition(i: usize, j: usize) -> Matrix4c {
    let mut a = Matrix4c::zeros();
    a[(i, j)] = ONE;
    a
}

/// Column-stacked superoperator of ρ ↦ A ρ B.
fn sandwich(a: &Matrix4c, b: &Matrix4c) -> Superop {
    b.transpose().kronecker(a)
}

impl Liouvillian {
    pub fn new(h: &Matrix4c, rates: &Rates) -> Result<Self> {
        rates.check()?;
        let id = Matrix4c::identity();
        let minus_i = Complex64::new(0.0, -1.0);
        let mut l = (sandwich(h, &id) - sandwich(&id, h)) * minus_i;

        let mut decay = |rate: f64, jump: Matrix4c| {
            if rate == 0.0 {
                return;
            }
            let jd = jump.adjoint();
            let n = jd * jump;
            l += (sandwich(&jump, &jd) - (sandwich(&n, &id) + sandwich(&id, &n)) * Complex64::from(0.5))
                * Complex64::from(rate);
        };
        decay(rates.gamma_e, transition(0, 1));
        decay(rates.gamma_r, transition(1, 2));
        decay(rates.gamma_rp, transition(0, 3));

        if rates.dephasing > 0.0 {
            for k in [2, 3] {
                let p = transition(k, k);
                l -= (sandwich(&p, &id) + sandwich(&id, &p) - sandwich(&p, &p) * Complex64::from(2.0))
                    * Complex64::from(rates.dephasing);
            }
        }
        Ok(Self { l_matrix: l })
    }

    pub fn apply(&self, rho: &DensityMatrix4) -> DensityMatrix4 {
        DensityMatrix4::from_vec(&(self.l_matrix * rho.to_vec()))
    }

    /// Largest |Tr(L X)| over the 16 matrix units X, i.e. how far the
    /// trace functional is from being a left null vector.
    pub fn trace_residual(&self) -> f64 {
        (0..16)
            .map(|col| (0..4).map(|k| self.l_matrix[(k + 4 * k, col)]).sum::<Complex64>().norm())
            .fold(0.0, f64::max)
    }

    /// Largest absolute entry, used to normalize residuals.
    pub fn scale(&self) -> f64 {
        self.l_matrix.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Superoperator for the Hamiltonian `h` and the configured decays, with
/// dephasing `gamma_r_total` = γ₀ + γ_t + γ_r on both Rydberg levels.
pub fn build_liouvillian(
    h: &Matrix4c,
    config: &ExperimentConfig,
    gamma_r_total: f64,
) -> Result<Liouvillian> {
    Liouvillian::new(h, &Rates::from_config(config, gamma_r_total))
}

/// Unique trace-one fixed point of `l`.
pub fn steady_state(l: &Liouvillian) -> Result<DensityMatrix4> {
    let (rho, _) = steady_state_with_deviation(l)?;
    Ok(rho)
}

/// Steady state plus the Hermiticity deviation removed by symmetrization.
pub fn steady_state_with_deviation(l: &Liouvillian) -> Result<(DensityMatrix4, f64)> {
    let mut a = l.l_matrix;
    let mut b = Vec16::zeros();
    for col in 0..16 {
        a[(0, col)] = ZERO;
    }
    for k in 0..4 {
        a[(0, k + 4 * k)] = ONE;
    }
    b[0] = ONE;

    let lu = a.full_piv_lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..16).map(|k| u[(k, k)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let pivot_ratio = if max > 0.0 { min / max } else { 0.0 };
    if !(pivot_ratio > DEGENERACY_THRESHOLD) {
        return Err(Error::DegenerateSteadyState { pivot_ratio });
    }
    let x = lu
        .solve(&b)
        .ok_or(Error::DegenerateSteadyState { pivot_ratio })?;
    let raw = DensityMatrix4::from_vec(&x);
    let deviation = raw.hermiticity_deviation();
    let sym = (raw.rho + raw.rho.adjoint()) * Complex64::from(0.5);
    let tr = sym.trace();
    Ok((DensityMatrix4 { rho: sym / tr }, deviation))
}

/// Fixed-step fourth-order Runge–Kutta integration of ρ̇ = L ρ.
pub fn time_evolve(l: &Liouvillian, rho0: &DensityMatrix4, t: f64, dt: f64) -> Result<DensityMatrix4> {
    if !(dt > 0.0) || !(t >= 0.0) {
        return Err(Error::Parameter(format!("need dt > 0 and t >= 0, got dt = {dt}, t = {t}")));
    }
    if t == 0.0 {
        return Ok(*rho0);
    }
    let steps = (t / dt).ceil() as usize;
    let h = t / steps as f64;
    let m = &l.l_matrix;
    let tr0 = rho0.trace();
    let mut y = rho0.to_vec();
    let half = Complex64::from(0.5 * h);
    let full = Complex64::from(h);
    let sixth = Complex64::from(h / 6.0);
    for step in 0..steps {
        let k1 = m * y;
        let k2 = m * (y + k1 * half);
        let k3 = m * (y + k2 * half);
        let k4 = m * (y + k3 * full);
        y += (k1 + (k2 + k3) * Complex64::from(2.0) + k4) * sixth;
        if step % 256 == 255 || step + 1 == steps {
            let rho = DensityMatrix4::from_vec(&y);
            let drift = (rho.trace() - tr0).norm();
            let bounded = y.iter().all(|z| z.norm() <= 1.0 + 1e-6 && z.re.is_finite());
            if drift > 1e-6 || !bounded {
                return Err(Error::StepSize { dt: h, drift });
            }
        }
    }
    Ok(DensityMatrix4::from_vec(&y))
}
