use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value at index {index} in {what}")]
    NonFinite { what: String, index: usize },

    #[error("missing attribute for class {0}")]
    MissingAttribute(i64),

    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("x-shot {x} exceeds the smallest target class (class {class} has {size} instances)")]
    ShotTooLarge { x: usize, class: i64, size: usize },

    #[error("empty training set")]
    EmptyTrainingSet,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
