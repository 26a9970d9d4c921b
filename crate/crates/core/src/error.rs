use std::path::PathBuf;

/// Errors raised across decomposition, grouping, layer and harness code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid rank {rank}: must lie in 1..={max}")]
    InvalidRank { rank: usize, max: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: r*K = {needed} but min(m, n) = {available}")]
    Capacity { needed: usize, available: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("constraint violation: {0}")]
    Constraint(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("regroup refused: destination expert {expert} has routing weight {alpha:e}")]
    DivisionHazard { expert: usize, alpha: f64 },

    #[error("operation not available in {0} mode")]
    Mode(&'static str),

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("numeric invariant failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
