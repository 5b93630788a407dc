//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right} ({context})")]
    DimensionMismatch {
        left: usize,
        right: usize,
        context: &'static str,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate bandwidth: all pairwise distances are zero")]
    DegenerateBandwidth,

    #[error("solver did not converge: {what} (residual {residual:.3e} after {iters} iterations)")]
    SolverDidNotConverge {
        what: &'static str,
        residual: f64,
        iters: usize,
    },

    #[error("separation detected in logistic fit (coefficient norm {norm:.3e}); consider a ridge penalty")]
    Separation { norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("index coverage error: {0}")]
    IndexCoverage(String),

    #[error("undefined value: {0}")]
    UndefinedValue(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("missing value at row {row}, column {column}")]
    MissingValue { row: usize, column: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
