use thiserror::Error;

use crate::solver::SolveStats;

/// Errors surfaced by every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("incompatible right-hand side: mean {mean:e} is not zero")]
    NonzeroMean { mean: f64 },

    #[error("{solver} did not converge after {} iterations (relative residual {:e})", stats.iterations, stats.final_residual)]
    NotConverged {
        solver: &'static str,
        stats: Box<SolveStats>,
    },

    #[error("line search stagnated at Newton iteration {} (relative residual {:e})", stats.iterations, stats.final_residual)]
    LineSearchStagnation { stats: Box<SolveStats> },

    #[error("coefficient not admissible: {0}")]
    Inadmissible(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("gradient {value:.4} left the tabulated range [0, {limit:.4}]")]
    OutOfTable { value: f64, limit: f64 },

    #[error("sample {index} failed: {source}")]
    Sample {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
