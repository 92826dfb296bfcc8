//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the estimation workbench.
#[derive(Debug, Error)]
pub enum FimError {
    /// Two inputs disagree on a dimension (vector length, matrix shape, ...).
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value violates its invariant.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A linear system could not be solved.
    #[error("singular linear system: {0}")]
    Singular(String),

    /// A numeric quantity became non-finite (training divergence, bad input).
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed dataset or checkpoint file.
    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FimError>;
