use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),

    #[error("index {index} outside the admissible range {lo}..={hi}")]
    Range { index: u64, lo: u64, hi: u64 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("backward recursion is not contracting at n = {index} (local factor {factor:.6})")]
    NonContracting { index: u64, factor: f64 },

    #[error("tail error bound {bound:e} exceeds tolerance {tol:e} with buffer {buffer}")]
    ToleranceNotReached { bound: f64, tol: f64, buffer: u64 },

    #[error("singular banded system at row {row} (residual {residual:e})")]
    Singular { row: usize, residual: f64 },

    #[error("linear solve residual {residual:e} above acceptance threshold")]
    Residual { residual: f64 },

    #[error("D({m}) is not converged (status {status})")]
    NotConverged { m: u64, status: String },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
