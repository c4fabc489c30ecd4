//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, data ingestion, and the numeric
/// engines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Domain(String),

    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: u64, message: String },

    #[error("group {0} has no observations")]
    EmptyGroup(u8),

    #[error(
        "degenerate score: the score distribution gives zero weight to every \
         support point active for an exact observation at t={time}"
    )]
    DegenerateScore { time: f64 },

    #[error("max-ent solver did not converge: residual inf-norm {residual:.3e} after {iterations} iterations")]
    NonConvergence { residual: f64, iterations: usize },

    #[error("moment constraints are infeasible on this mesh: {0}")]
    InfeasibleMoments(String),

    #[error("combinatorial blow-up: expansion needs {needed} terms, cap is {cap}")]
    CombinatorialCap { needed: usize, cap: usize },

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T, E = Error> = std::result::Result<T, E>;
