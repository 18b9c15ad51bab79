use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("block {0} is empty")]
    EmptyBlock(String),

    #[error("empty sample stream")]
    EmptyStream,

    #[error("no samples fell in the large region")]
    NoLargeSamples,

    #[error("degenerate estimator input: {0}")]
    Degenerate(&'static str),

    #[error("non-positive value {0} where a positive measure is required")]
    NonPositiveValue(f64),

    #[error("sample {value} is still non-positive after shifting by {shift}")]
    ShiftExceeded { value: f64, shift: f64 },

    #[error("length mismatch: {0}")]
    Mismatch(String),

    #[error("resume rejected: {0}")]
    Resume(String),

    #[error("query syntax error at byte {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used for exit codes and machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) | Error::Syntax { .. } => "usage",
            Error::Resume(_) => "resume",
            _ => "data",
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
