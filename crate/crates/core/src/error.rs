use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate split: {0}")]
    DegenerateSplit(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// User has no interactions at all; fold-in weights are undefined.
    /// Serve such users with the zero or mean strategy instead.
    #[error("cold user {user}: fold-in undefined without interactions")]
    ColdUser { user: usize },

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("fold-in diverged at step {step}: embedding norm exceeded {limit}")]
    FoldInDiverged { step: usize, limit: f64 },

    #[error("rank-degenerate input: {0}")]
    Degenerate(String),

    #[error("stale fold-in plan: built from model {plan:016x}, current model is {model:016x}")]
    StalePlan { plan: u64, model: u64 },

    #[error("fingerprint mismatch: expected {expected:016x}, found {found:016x}")]
    FingerprintMismatch { expected: u64, found: u64 },

    #[error("corrupt file {path}: {message}")]
    CorruptFile { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
