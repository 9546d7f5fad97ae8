//! Mean-field Rydberg–Rydberg interactions: excitation fractions, blockade
//! radii, level shifts and the dephasing caused by their spread.
//!
//! C₆ tables and C₃ are ordinary frequencies (Hz m⁶, Hz m³) and are turned
//! into angular frequencies here with a single factor 2π.

use std::f64::consts::PI;

use serde::Serialize;

use crate::bloch::LevelShifts;
use crate::error::{Error, Result};
use crate::quantities::{ExperimentConfig, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcitationFractions {
    pub sigma_rr: f64,
    pub sigma_rprp: f64,
    pub sigma_rrp_abs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockadeGeometry {
    pub r_b: f64,
    pub r_b_prime: f64,
    /// Atoms inside one blockade sphere of radius `r_b`.
    pub n_b: f64,
    /// ∫C₆ sin θ dθ, rad/s m⁶.
    pub c6_avg: f64,
    pub c6p_avg: f64,
    /// ∫C₆² sin θ dθ, rad²/s² m¹².
    pub c6_sq_avg: f64,
    pub c6p_sq_avg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InteractionSummary {
    pub shifts: LevelShifts,
    pub var_rr: f64,
    pub var_rprp: f64,
    pub var_rrp: f64,
    pub gamma_r: f64,
}

/// Steady-state excitation fractions of |3⟩, |4⟩ and the |3⟩–|4⟩ amplitude,
/// evaluated at the configured probe Rabi frequency.
pub fn excitation_fractions(config: &ExperimentConfig) -> Result<ExcitationFractions> {
    fractions_at(config, config.omega_p0)
}

pub fn fractions_at(config: &ExperimentConfig, omega_p: f64) -> Result<ExcitationFractions> {
    let g = config.gamma_e;
    let gr = config.gamma_r_decay;
    let grp = config.gamma_rp_decay;
    let (op, oc, ol) = (omega_p, config.omega_c0, config.omega_l);

    let a = g * gr * gr + ol * ol * g + oc * oc * grp;
    let b = op * oc * grp;
    let c = ol * op * oc;
    let denom = a * a + b * b + c * c;
    if !(denom > 0.0) {
        return Err(Error::Domain(
            "excitation fractions undefined: all rates and Rabi frequencies vanish".into(),
        ));
    }
    Ok(ExcitationFractions {
        sigma_rr: b * b / denom,
        sigma_rprp: c * c / denom,
        sigma_rrp_abs: gr * op * op * oc * oc * ol / denom,
    })
}

/// Angular averages of the C₆ tables and the blockade radii set by
/// `gamma_eit`.
pub fn blockade_geometry(config: &ExperimentConfig) -> Result<BlockadeGeometry> {
    geometry_for(config, config.gamma_eit)
}

fn geometry_for(config: &ExperimentConfig, gamma_eit: f64) -> Result<BlockadeGeometry> {
    if !(gamma_eit > 0.0) {
        return Err(Error::Domain(format!("EIT linewidth must be positive, got {gamma_eit}")));
    }
    let c6_avg = TWO_PI * config.c6_table.sin_weighted_integral(|c| c);
    let c6p_avg = TWO_PI * config.c6p_table.sin_weighted_integral(|c| c);
    let c6_sq_avg = TWO_PI.powi(2) * config.c6_table.sin_weighted_integral(|c| c * c);
    let c6p_sq_avg = TWO_PI.powi(2) * config.c6p_table.sin_weighted_integral(|c| c * c);
    for (name, v) in [("C6", c6_avg), ("C6'", c6p_avg)] {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("angular average of {name} must be positive, got {v}")));
        }
    }
    let r_b = (2.0 * c6_avg / gamma_eit).powf(1.0 / 6.0);
    let r_b_prime = (2.0 * c6p_avg / gamma_eit).powf(1.0 / 6.0);
    Ok(BlockadeGeometry {
        r_b,
        r_b_prime,
        n_b: config.n_at * 4.0 * PI * r_b.powi(3) / 3.0,
        c6_avg,
        c6p_avg,
        c6_sq_avg,
        c6p_sq_avg,
    })
}

fn dde_log(config: &ExperimentConfig, geometry: &BlockadeGeometry) -> Result<f64> {
    let w = config.waist_c;
    if !(w > geometry.r_b) {
        return Err(Error::Domain(format!(
            "coupling waist {w:e} m must exceed the blockade radius {:e} m",
            geometry.r_b
        )));
    }
    Ok((w / geometry.r_b).ln())
}

/// Mean vdW and exchange shifts of the Rydberg levels, rad/s.
pub fn level_shifts(
    config: &ExperimentConfig,
    fractions: &ExcitationFractions,
    geometry: &BlockadeGeometry,
) -> Result<LevelShifts> {
    let n = config.n_at;
    let c3 = TWO_PI * config.c3;
    Ok(LevelShifts {
        v_vdw: 2.0 * PI * geometry.c6_avg * fractions.sigma_rr * n / (3.0 * geometry.r_b.powi(3)),
        v_vdw_prime: 2.0 * PI * fractions.sigma_rprp * n * geometry.c6p_avg
            / (3.0 * geometry.r_b_prime.powi(3)),
        v_dd: 4.0 * PI * c3 * fractions.sigma_rrp_abs * n * dde_log(config, geometry)?,
    })
}

/// Shift variances and the resulting dephasing rate γ_r.
pub fn dephasing_rate(
    config: &ExperimentConfig,
    fractions: &ExcitationFractions,
    geometry: &BlockadeGeometry,
) -> Result<InteractionSummary> {
    let shifts = level_shifts(config, fractions, geometry)?;
    let n = config.n_at;
    let c3 = TWO_PI * config.c3;
    let var_rr = 2.0 * PI * fractions.sigma_rr * n / (9.0 * geometry.r_b.powi(9)) * geometry.c6_sq_avg;
    let var_rprp =
        2.0 * PI * fractions.sigma_rprp * n / (9.0 * geometry.r_b_prime.powi(9)) * geometry.c6p_sq_avg;
    let var_rrp = 4.0 * PI * c3 * c3 * fractions.sigma_rrp_abs * n / (3.0 * geometry.r_b.powi(3));
    Ok(InteractionSummary {
        shifts,
        var_rr,
        var_rprp,
        var_rrp,
        gamma_r: var_rr.sqrt() + var_rprp.sqrt() + 2.0 * var_rrp.sqrt(),
    })
}

/// Full interaction summary at the configured operating point.
pub fn summarize(config: &ExperimentConfig) -> Result<InteractionSummary> {
    let fractions = excitation_fractions(config)?;
    let geometry = blockade_geometry(config)?;
    dephasing_rate(config, &fractions, &geometry)
}

/// Result of the γ_EIT fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfConsistent {
    pub summary: InteractionSummary,
    pub gamma_eit: f64,
    pub iterations: usize,
}

/// Iterates γ_EIT ← `linewidth`(γ_r) starting from the configured value
/// until the relative change drops below 1e-6 (at most 10 rounds).
pub fn self_consistent(
    config: &ExperimentConfig,
    mut linewidth: impl FnMut(&InteractionSummary) -> Result<f64>,
) -> Result<SelfConsistent> {
    const MAX_ITER: usize = 10;
    let fractions = excitation_fractions(config)?;
    let mut gamma_eit = config.gamma_eit;
    let mut change = f64::INFINITY;
    for iteration in 1..=MAX_ITER {
        let geometry = geometry_for(config, gamma_eit)?;
        let summary = dephasing_rate(config, &fractions, &geometry)?;
        let next = linewidth(&summary)?;
        if !(next > 0.0 && next.is_finite()) {
            return Err(Error::Domain(format!("linewidth update returned {next}")));
        }
        change = (next - gamma_eit).abs() / gamma_eit;
        gamma_eit = next;
        if change < 1e-6 {
            let geometry = geometry_for(config, gamma_eit)?;
            return Ok(SelfConsistent {
                summary: dephasing_rate(config, &fractions, &geometry)?,
                gamma_eit,
                iterations: iteration,
            });
        }
    }
    Err(Error::NonConvergence { iterations: MAX_ITER, change })
}
