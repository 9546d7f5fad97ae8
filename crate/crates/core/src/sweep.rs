//! Parameter sweeps, the temperature/optical-depth map and the local Rabi
//! frequency optimizer.
//!
//! Sweep points are evaluated in parallel on the current rayon pool and
//! gathered by index, so results do not depend on the worker count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise_budget::{correlation, NoiseBudget, OperatingPoint, TransmissionModel};
use crate::interactions;
use crate::quantities::{derive, temperature_for_doppler_width, ExperimentConfig, TWO_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    /// Axis value in SI units (W for power sweeps, atoms for atom sweeps).
    pub axis: f64,
    pub atoms: f64,
    pub gamma_r: f64,
    pub transmission: f64,
    pub slope: f64,
    pub budget: NoiseBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis_name: String,
    pub axis_unit: String,
    pub r: f64,
    pub config_hash: String,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn series_at(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.budget.nef_at).collect()
    }

    pub fn series_ph(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.budget.nef_ph).collect()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.budget.total).collect()
    }

    /// Index of the smallest combined sensitivity.
    pub fn argmin(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.budget.total.total_cmp(&b.1.budget.total))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }

    /// CSV with the field densities in nV cm⁻¹ Hz⁻¹ᐟ².
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{}_{},atoms,gamma_r_hz,transmission,slope_per_rad_s,nef_at,nef_ph,nef_pd,nef_ex,r,total,t2_s,gain\n",
            self.axis_name, self.axis_unit
        );
        for row in &self.rows {
            let b = &row.budget;
            let nv = crate::quantities::to_nv_per_cm;
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
                row.axis,
                row.atoms,
                row.gamma_r / TWO_PI,
                row.transmission,
                row.slope,
                nv(b.nef_at),
                nv(b.nef_ph),
                nv(b.nef_pd),
                nv(b.nef_ex),
                b.r,
                nv(b.total),
                b.t2,
                b.gain
            ));
        }
        out
    }
}

fn check_axis(grid: &[f64], name: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Parameter(format!("{name} grid is empty")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter(format!("{name} grid must be strictly increasing")));
    }
    Ok(())
}

fn rows_from(points: Vec<(f64, f64, OperatingPoint)>, r: f64) -> Result<Vec<SweepRow>> {
    points
        .into_iter()
        .map(|(axis, atoms, p)| {
            Ok(SweepRow {
                axis,
                atoms,
                gamma_r: p.interactions.gamma_r,
                transmission: p.transmission,
                slope: p.slope,
                budget: p.budget(r)?,
            })
        })
        .collect()
}

/// Operating point at probe power `p` with the atom number read from the
/// measured N(P) table.
pub fn config_at_power(config: &ExperimentConfig, p: f64) -> Result<ExperimentConfig> {
    let atoms = config.n_vs_power.interpolate(p)?;
    Ok(config.with_probe_power(p).with_atom_number(atoms))
}

fn power_points(config: &ExperimentConfig, grid: &[f64]) -> Result<Vec<(f64, f64, OperatingPoint)>> {
    check_axis(grid, "probe power")?;
    for &p in grid {
        config.n_vs_power.interpolate(p)?;
    }
    grid.par_iter()
        .map(|&p| {
            let cfg = config_at_power(config, p)?;
            let point = OperatingPoint::evaluate(&cfg)?;
            Ok((p, point.derived.big_n, point))
        })
        .collect()
}

/// Budget against probe power. The correlation coefficient is taken from
/// the config when given, otherwise computed from this sweep.
pub fn sweep_probe_power(config: &ExperimentConfig, grid: &[f64]) -> Result<SweepTable> {
    let points = power_points(config, grid)?;
    let r = match config.correlation_r {
        Some(r) => r,
        None => {
            let at: Vec<f64> = points.iter().map(|p| p.2.components.nef_at).collect();
            let ph: Vec<f64> = points.iter().map(|p| p.2.components.nef_ph).collect();
            correlation(&at, &ph)?
        }
    };
    Ok(SweepTable {
        axis_name: "probe_power".into(),
        axis_unit: "w".into(),
        r,
        config_hash: config.hash(),
        rows: rows_from(points, r)?,
    })
}

/// Correlation coefficient for `config`: the configured value, or the one
/// produced by a probe-power sweep over the N(P) table.
pub fn resolve_correlation(config: &ExperimentConfig) -> Result<f64> {
    match config.correlation_r {
        Some(r) => Ok(r),
        None => Ok(sweep_probe_power(config, config.n_vs_power.powers())?.r),
    }
}

/// Budget against atom number at the configured probe power, scaling the
/// density at fixed sensing volume.
pub fn sweep_atom_number(config: &ExperimentConfig, grid: &[f64], r: f64) -> Result<SweepTable> {
    check_axis(grid, "atom number")?;
    if grid[0] <= 0.0 {
        return Err(Error::Parameter("atom numbers must be positive".into()));
    }
    let points: Vec<(f64, f64, OperatingPoint)> = grid
        .par_iter()
        .map(|&n| {
            let cfg = config.with_atom_number(n);
            Ok((n, n, OperatingPoint::evaluate(&cfg)?))
        })
        .collect::<Result<_>>()?;
    Ok(SweepTable {
        axis_name: "atoms".into(),
        axis_unit: "count".into(),
        r,
        config_hash: config.hash(),
        rows: rows_from(points, r)?,
    })
}

/// Full budget at the configured operating point.
pub fn budget(config: &ExperimentConfig) -> Result<(OperatingPoint, NoiseBudget)> {
    let r = resolve_correlation(config)?;
    let point = OperatingPoint::evaluate(config)?;
    let b = point.budget(r)?;
    Ok((point, b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapResult {
    /// Atomic temperatures, K.
    pub temperatures: Vec<f64>,
    /// Probe Doppler widths matching `temperatures`, rad/s.
    pub doppler_widths: Vec<f64>,
    pub optical_depths: Vec<f64>,
    /// S / NEF_at, indexed [temperature][optical depth].
    pub ratio: Vec<Vec<f64>>,
    pub nef_ph: Vec<Vec<f64>>,
    pub nef_at: Vec<Vec<f64>>,
    pub r: f64,
    pub config_hash: String,
}

/// Config at temperature `temp` with the density set to give optical depth
/// `d_opt` through the absorption cross section.
pub fn config_at_cell(config: &ExperimentConfig, temp: f64, d_opt: f64) -> Result<ExperimentConfig> {
    let sigma = derive(config)?.sigma12;
    let mut cfg = config.with_temperature(temp);
    cfg.n_at = d_opt / (sigma * config.length_l);
    cfg.d_opt = None;
    Ok(cfg)
}

/// S/NEF_at over a temperature × optical-depth grid, plus the NEF_ph and
/// NEF_at values behind each cell.
pub fn map_temperature_od(
    config: &ExperimentConfig,
    temperatures: &[f64],
    optical_depths: &[f64],
    r: f64,
) -> Result<MapResult> {
    check_axis(temperatures, "temperature")?;
    check_axis(optical_depths, "optical depth")?;
    let cells: Vec<(usize, usize)> = (0..temperatures.len())
        .flat_map(|i| (0..optical_depths.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cfg = config_at_cell(config, temperatures[i], optical_depths[j])?;
            let p = OperatingPoint::evaluate(&cfg)?;
            let b = p.budget(r)?;
            Ok((b.total / b.nef_at, b.nef_ph, b.nef_at))
        })
        .collect::<Result<_>>()?;
    let m = optical_depths.len();
    let pick = |k: usize| -> Vec<Vec<f64>> {
        results
            .chunks(m)
            .map(|row| row.iter().map(|c| [c.0, c.1, c.2][k]).collect())
            .collect()
    };
    let widths = temperatures
        .iter()
        .map(|&t| Ok(derive(&config.with_temperature(t))?.gamma_d))
        .collect::<Result<_>>()?;
    Ok(MapResult {
        temperatures: temperatures.to_vec(),
        doppler_widths: widths,
        optical_depths: optical_depths.to_vec(),
        ratio: pick(0),
        nef_ph: pick(1),
        nef_at: pick(2),
        r,
        config_hash: config.hash(),
    })
}

/// Probe Doppler widths (ordinary frequency, Hz) of the published PSN curves.
pub const PSN_CURVE_WIDTHS_HZ: [f64; 6] = [0.3e6, 29e6, 92e6, 246e6, 405e6, 509e6];

/// NEF_ph against optical depth for each Doppler width (rad/s).
pub fn psn_curves(config: &ExperimentConfig, doppler_widths: &[f64], optical_depths: &[f64]) -> Result<Vec<Vec<f64>>> {
    let temps: Vec<f64> = doppler_widths
        .iter()
        .map(|&g| temperature_for_doppler_width(config, g))
        .collect();
    let cells: Vec<(usize, usize)> = (0..temps.len())
        .flat_map(|i| (0..optical_depths.len()).map(move |j| (i, j)))
        .collect();
    let flat: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let cfg = config_at_cell(config, temps[i], optical_depths[j])?;
            Ok(OperatingPoint::evaluate(&cfg)?.components.nef_ph)
        })
        .collect::<Result<_>>()?;
    Ok(flat.chunks(optical_depths.len()).map(|c| c.to_vec()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RabiOptimum {
    /// Ω_L maximizing |∂T_P/∂Ω_L|, rad/s.
    pub omega_l: f64,
    /// ∂T_P/∂Ω_L there, per rad/s.
    pub slope: f64,
    /// True when the maximum sits on the bracket edge.
    pub at_boundary: bool,
    /// The configured Ω_L, for comparison.
    pub configured_omega_l: f64,
    pub configured_slope: f64,
}

const SCAN_POINTS: usize = 121;

/// Maximizes |∂T_P/∂Ω_L| over [lo, hi]: coarse scan, then golden section
/// around the best scan point to 1e-3 relative.
pub fn optimize_with(tm: &TransmissionModel, lo: f64, hi: f64) -> Result<RabiOptimum> {
    optimize_scan(tm, lo, hi, SCAN_POINTS)
}

pub fn optimize_scan(tm: &TransmissionModel, lo: f64, hi: f64, points: usize) -> Result<RabiOptimum> {
    if !(hi > lo && lo >= 0.0) {
        return Err(Error::Parameter(format!("invalid Ω_L bracket [{lo}, {hi}]")));
    }
    let points = points.max(5);
    let xs: Vec<f64> = (0..points).map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64).collect();
    let ys: Vec<f64> = xs
        .par_iter()
        .map(|&x| Ok(tm.slope(x)?.abs()))
        .collect::<Result<_>>()?;
    let best = ys
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let configured = tm.model.drive.omega_l;
    let configured_slope = tm.slope(configured)?;
    if best == 0 || best == points - 1 {
        let x = xs[best];
        return Ok(RabiOptimum {
            omega_l: x,
            slope: tm.slope(x)?,
            at_boundary: true,
            configured_omega_l: configured,
            configured_slope,
        });
    }
    let f = |x: f64| -> Result<f64> { Ok(-tm.slope(x)?.abs()) };
    let x = golden_section(f, xs[best - 1], xs[best + 1], 1e-3)?;
    Ok(RabiOptimum {
        omega_l: x,
        slope: tm.slope(x)?,
        at_boundary: false,
        configured_omega_l: configured,
        configured_slope,
    })
}

/// Golden-section minimization of `f` on [a, b] to relative width `rel`.
pub fn golden_section(f: impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, rel: f64) -> Result<f64> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..200 {
        if (b - a).abs() <= rel * 0.5 * (a + b).abs().max(f64::MIN_POSITIVE) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Ω_L maximizing the heterodyne slope at the configured operating point,
/// searched over [0, Ω_C].
pub fn optimize_local_rabi(config: &ExperimentConfig) -> Result<RabiOptimum> {
    let derived = derive(config)?;
    let summary = interactions::summarize(config)?;
    let tm = TransmissionModel::new(config, &derived, &summary)?;
    optimize_with(&tm, 0.0, config.omega_c0)
}

/// Log-spaced grid of `n` points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![hi];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = golden_section(|x| Ok((x - 1.3).powi(2)), 0.0, 3.0, 1e-8).unwrap();
        assert!((x - 1.3).abs() < 1e-7);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(1e3, 1e6, 4);
        assert!((g[0] - 1e3).abs() < 1e-9 && (g[3] - 1e6).abs() < 1e-6);
        assert!((g[1] - 1e4).abs() < 1e-8);
    }

    #[test]
    fn power_outside_table_is_an_extrapolation_error() {
        let cfg = ExperimentConfig::reference();
        let err = sweep_probe_power(&cfg, &[0.1e-6, 1e-6]).unwrap_err();
        assert!(matches!(err, Error::Extrapolation { .. }));
    }

    #[test]
    fn slope_vanishes_at_zero_local_field() {
        let cfg = ExperimentConfig::reference();
        let derived = derive(&cfg).unwrap();
        let summary = interactions::summarize(&cfg).unwrap();
        let tm = TransmissionModel::new(&cfg, &derived, &summary).unwrap();
        let at_zero = tm.slope(0.0).unwrap().abs();
        let at_reference = tm.slope(cfg.omega_l).unwrap().abs();
        assert!(at_zero < 1e-3 * at_reference, "{at_zero} vs {at_reference}");
    }

    #[test]
    fn optimum_is_interior_and_grid_stable() {
        let cfg = ExperimentConfig::reference();
        let derived = derive(&cfg).unwrap();
        let summary = interactions::summarize(&cfg).unwrap();
        let tm = TransmissionModel::new(&cfg, &derived, &summary).unwrap();
        let a = optimize_scan(&tm, 0.0, cfg.omega_c0, 121).unwrap();
        let b = optimize_scan(&tm, 0.0, cfg.omega_c0, 241).unwrap();
        assert!(!a.at_boundary);
        assert!((a.omega_l - b.omega_l).abs() < 0.02 * b.omega_l, "{} vs {}", a.omega_l, b.omega_l);
        assert!(a.slope.abs() >= a.configured_slope.abs());
        // A tighter bracket around the optimum finds the same point.
        let c = optimize_scan(&tm, 0.5 * a.omega_l, 2.0 * a.omega_l, 61).unwrap();
        assert!((c.omega_l - a.omega_l).abs() < 0.02 * a.omega_l);
    }
}
