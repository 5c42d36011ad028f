use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FarmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FarmError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed input at row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("preprocess: {0}")]
    Preprocess(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("cluster: {0}")]
    Cluster(String),

    #[error("adapt: {0}")]
    Adapt(String),

    #[error("eval: {0}")]
    Eval(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl FarmError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FarmError::Io {
            path: path.into(),
            source,
        }
    }
}
