//! Single-photon waveform shaping by a resonant absorber with a
//! sinusoidally modulated phase.
//!
//! Frequencies enter in cyclic MHz and times in ns; formulas work with
//! angular rates in rad/us and times in us.

pub mod acquisition;
pub mod analysis;
pub mod averaging;
pub mod fitting;
pub mod model;
pub mod numerics;
pub mod transmission;

use thiserror::Error;

pub use model::{default_config, parse_config, serialize_config, PhysicsConfig, Preset, TimeGrid};
pub use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] model::ConfigError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error("out of scope: {0}")]
    OutOfScope(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("fit did not converge after {iterations} iterations")]
    FitNonConvergence { iterations: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
