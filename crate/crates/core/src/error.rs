use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected} but got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("{op}: invalid argument: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{0}: backward called without a matching cached forward pass")]
    MissingCache(&'static str),

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("training aborted at iteration {iteration}: {reason}; last checkpoint: {}", last_checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    NumericAbort {
        iteration: usize,
        reason: String,
        last_checkpoint: Option<PathBuf>,
    },

    #[error("image `{path}`: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("model store: {0}")]
    Store(#[from] StoreError),

    #[error("I/O error on `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure kinds for reading a model container. Each names the offending field.
#[derive(Debug, Error)]
pub enum StoreError {
    #[error("bad magic: expected \"MSCN\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("format-version mismatch: file has {found}, reader supports {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated header: `{field}` needs {needed} bytes, {available} available")]
    TruncatedHeader {
        field: &'static str,
        needed: u64,
        available: u64,
    },

    #[error("unreadable manifest: {0}")]
    ManifestParse(String),

    #[error("manifest inconsistency in `{field}`: {reason}")]
    ManifestInconsistency { field: String, reason: String },

    #[error("tensor `{name}` has shape {manifest:?} in the manifest but the architecture needs {expected:?}")]
    TensorShape {
        name: String,
        manifest: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("blob byte count disagreement: `blob_len` is {declared} but manifest shapes need {expected}")]
    ByteCount { declared: u64, expected: u64 },

    #[error("truncated blob: `blob_len` declares {declared} bytes, only {available} present")]
    TruncatedBlob { declared: u64, available: u64 },

    #[error("{extra} trailing bytes after blob")]
    TrailingBytes { extra: u64 },
}
