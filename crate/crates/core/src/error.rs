//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed container: bad magic, unsupported version or dtype tag.
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter (or longer) than the header declares.
    #[error("length error: {0}")]
    Length(String),

    /// Non-finite entries or internally inconsistent quantized data.
    #[error("data error: {0}")]
    Data(String),

    /// Argument outside its documented domain.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Invalid synthetic-generation spec (e.g. singular values not descending).
    #[error("spec error: {0}")]
    InvalidSpec(String),

    /// Desk-scale dimension guard exceeded.
    #[error("size error: {0}")]
    Size(String),

    /// Iterative method ran out of iterations; carries the last estimate.
    #[error("power iteration did not converge after {iterations} iterations (last estimate {last_estimate})")]
    Convergence {
        iterations: usize,
        last_estimate: f64,
    },

    /// No feasible bit-width pair for the requested budget.
    #[error("allocation error: {0}")]
    Allocation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
