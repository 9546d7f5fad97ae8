//! Sensitivity model of a cold-atom Rydberg microwave heterodyne receiver.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantities`]: constants, configuration and derived single-atom numbers
//! * [`bloch`]: four-level master equation and its steady state
//! * [`doppler`]: velocity averaging and probe transmission
//! * [`interactions`]: mean-field Rydberg shifts and dephasing
//! * [`noise_budget`]: noise-equivalent fields and the combined sensitivity
//! * [`spectra`]: transmission spectra and susceptibility fits
//! * [`heterodyne_dsp`]: synthetic photovoltage traces and their spectra
//! * [`sweep`]: parameter sweeps and maps used by the command line tool
//!
//! Field spectral densities are carried in V m⁻¹ Hz⁻¹ᐟ² internally; the CLI
//! reports nV cm⁻¹ Hz⁻¹ᐟ².

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bloch;
pub mod cli;
pub mod doppler;
pub mod error;
pub mod heterodyne_dsp;
pub mod interactions;
pub mod noise_budget;
pub mod quantities;
pub mod spectra;
pub mod sweep;

pub use error::{Error, Result};
pub use quantities::{derive, load_config, DerivedParams, ExperimentConfig, CONSTANTS};
