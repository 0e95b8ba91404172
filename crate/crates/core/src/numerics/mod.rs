//! Special functions, quadrature and root finding.

pub mod bessel;
pub mod quadrature;
pub mod roots;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bessel::{bessel_i0, bessel_i0e, bessel_j, bessel_j_sequence, scaled_j, scaled_j_sequence};
pub use quadrature::{gauss_legendre, integrate_complex, integrate_complex_panels, CumulativeRule, QuadratureSpec};
pub use roots::{find_roots, find_roots_sampled};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("{function}({argument}) overflows f64")]
    Overflow { function: &'static str, argument: f64 },
    #[error("quadrature on [{a}, {b}] did not converge (error estimate {estimate:e} near t = {at})")]
    NonConvergence { a: f64, b: f64, estimate: f64, at: f64 },
    #[error("integrand is not finite near {at}")]
    NonFinite { at: f64 },
    #[error("invalid interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
    #[error("invalid numerical settings: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} roots, found {found}")]
    RootCount { expected: usize, found: usize, roots: Vec<f64> },
}

/// Truncation of the Bessel-type series in the satellite kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesTruncation {
    pub k_max: u32,
    /// Terms with magnitude below this are dropped.
    pub cutoff: f64,
}

impl Default for SeriesTruncation {
    fn default() -> Self {
        Self { k_max: 60, cutoff: 1e-14 }
    }
}

impl SeriesTruncation {
    pub fn new(k_max: u32, cutoff: f64) -> Result<Self, NumericsError> {
        if k_max < 1 || !(cutoff > 0.0) {
            return Err(NumericsError::InvalidSpec(format!("k_max={k_max}, cutoff={cutoff}")));
        }
        Ok(Self { k_max, cutoff })
    }

    /// Keep only the leading term.
    pub fn first_term() -> Self {
        Self { k_max: 1, cutoff: 1e-14 }
    }
}
