use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    /// A training step produced NaN or infinity.
    #[error("training aborted: non-finite value produced by {0}")]
    TrainingAborted(&'static str),

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("tensors recorded on different tapes")]
    TapeMismatch,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("loss is not tracked on this tape")]
    Untracked,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("data error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("size mismatch in {path}: {msg}")]
    SizeMismatch { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
