use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CfsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CfsError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no ranking weights for request {0}")]
    MissingModel(u64),

    #[error("invalid score at item {index}: {value}")]
    InvalidScore { index: usize, value: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("unsupported format version {found} in {path} (expected {expected})")]
    Version { path: PathBuf, found: u32, expected: u32 },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("environment state error: {0}")]
    State(String),

    #[error("training diverged at episode {episode}: {reason}")]
    Divergence { episode: usize, reason: String },

    #[error("oracle refused: p = {p} exceeds the enumeration cap of {cap}")]
    OracleCap { p: usize, cap: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CfsError {
    /// Short stable tag used by the command line for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            CfsError::Shape(_) => "shape",
            CfsError::MissingModel(_) => "missing-model",
            CfsError::InvalidScore { .. } => "invalid-score",
            CfsError::InvalidValue(_) => "invalid-value",
            CfsError::Config(_) => "config",
            CfsError::Format { .. } => "format",
            CfsError::Version { .. } => "version",
            CfsError::Checkpoint(_) => "checkpoint",
            CfsError::State(_) => "state",
            CfsError::Divergence { .. } => "divergence",
            CfsError::OracleCap { .. } => "oracle-cap",
            CfsError::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CfsError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        CfsError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
