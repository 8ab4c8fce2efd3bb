//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse error category, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration, malformed dataset, or invalid request.
    Config,
    /// Numeric failure during training or evaluation.
    Numeric,
    /// Underlying I/O failure.
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op}: non-finite input")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },

    #[error("adam step: parameter {index} has no gradient")]
    MissingGrad { index: usize },

    #[error("training diverged: non-finite loss at epoch {epoch} (recent losses: {history:?})")]
    NonFiniteLoss { epoch: usize, history: Vec<f64> },

    #[error("{path}: {detail}")]
    Ingest { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::ShapeMismatch { .. }
            | Error::NonFinite { .. }
            | Error::NonScalarLoss { .. }
            | Error::MissingGrad { .. }
            | Error::NonFiniteLoss { .. } => ErrorKind::Numeric,
            Error::Ingest { .. } | Error::Config(_) => ErrorKind::Config,
            Error::Io { .. } => ErrorKind::Io,
        }
    }

    pub fn ingest(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
