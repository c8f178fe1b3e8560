//! Numeric substrate: dense matrices, deterministic random streams, and the
//! differentiation tape every other module builds on.
//!
//! All arithmetic is 64-bit. KL values in the attack/defense comparisons span
//! many orders of magnitude and 32-bit precision visibly distorts them.

pub mod autodiff;
pub mod finite_diff;
pub mod matrix;
pub mod rng;

use thiserror::Error;

/// Errors from the dense linear-algebra kernels.
#[derive(Debug, Error)]
pub enum NumericsError {
    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} is {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    /// Power iteration did not reach the requested tolerance.
    #[error("eigenpair iteration did not converge within {max_iters} iterations")]
    NoConvergence { max_iters: usize },
    /// Shape mismatch between operands.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}
