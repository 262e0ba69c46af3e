use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("graph already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic bytes")]
    BadMagic { path: PathBuf },

    #[error("{path}: unsupported PRNF version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: corrupt payload: {reason}")]
    CorruptPayload { path: PathBuf, reason: String },

    #[error("{path}: {reason}")]
    InvalidData { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint config mismatch: stored {stored}, requested {requested}")]
    ConfigMismatch { stored: String, requested: String },

    #[error("non-finite gradient for parameter {name}")]
    NonFiniteGradient { name: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteGradient { .. } | Error::Diverged { .. }
        )
    }
}
