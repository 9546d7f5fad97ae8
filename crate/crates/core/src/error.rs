use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the model can report.
///
/// Variants fall in two families: input problems (schema, validation,
/// parameter, extrapolation) and numerical problems (solver, quadrature,
/// fits). [`Error::exit_code`] maps them onto the CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error at `{key}`: {message}")]
    Schema { key: String, message: String },

    #[error("invalid value for `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("{axis} value {value:e} lies outside the tabulated range [{min:e}, {max:e}]")]
    Extrapolation {
        axis: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("degenerate steady state: pivot ratio {pivot_ratio:e} (kernel is not one-dimensional)")]
    DegenerateSteadyState { pivot_ratio: f64 },

    #[error("time step {dt:e} s is unstable: trace drifted by {drift:e}")]
    StepSize { dt: f64, drift: f64 },

    #[error("quadrature did not converge: last refinement changed the result by {change:e}")]
    Accuracy { change: f64 },

    #[error("unphysical probe gain: Im rho21 = {im_rho21:e}")]
    UnphysicalGain { im_rho21: f64 },

    #[error("operating point insensitive to the local field: |dT/dOmega_L| = {derivative:e} per rad/s")]
    InsensitiveOperatingPoint { derivative: f64 },

    #[error("all coherence rates are zero, T2 is unbounded")]
    InfiniteCoherence,

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("susceptibility pole at probe detuning {detuning:e} rad/s")]
    Singularity { detuning: f64 },

    #[error("fit failed: {message} (residual rms {residual_rms:e})")]
    Fit { message: String, residual_rms: f64 },

    #[error("adiabatic limit violated: {0}")]
    Adiabaticity(String),

    #[error("no convergence after {iterations} iterations (last relative change {change:e})")]
    NonConvergence { iterations: usize, change: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// 2 for bad input, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Schema { .. }
            | Error::Validation { .. }
            | Error::Parameter(_)
            | Error::Extrapolation { .. }
            | Error::Adiabaticity(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn validation(field: &str, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }
}
