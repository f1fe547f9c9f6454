use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid axis {axis} for shape {shape:?} in {op}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error(transparent)]
    Trace(#[from] TraceError),

    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Divergence {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short, stable name for the failure class; used by the CLI diagnostics.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::InvalidAxis { .. } => "dimension",
            Error::NonFinite(_) => "non-finite",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Csv { .. } => "csv",
            Error::Trace(t) => t.class(),
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) | Error::CheckpointVersion { .. } => "checkpoint",
            Error::Io { .. } => "io",
        }
    }
}

/// Failures reading or writing a teacher trace directory.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace manifest is invalid: {0}")]
    Manifest(String),

    #[error("trace schema version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("trace blob `{0}` is missing")]
    MissingBlob(String),

    #[error("trace blob `{name}` is truncated or padded: {actual} bytes on disk, manifest records {recorded}")]
    Truncated {
        name: String,
        recorded: u64,
        actual: u64,
    },

    #[error("trace blob `{name}` checksum mismatch: manifest {expected}, computed {actual}")]
    ChecksumMismatch {
        name: String,
        expected: String,
        actual: String,
    },

    #[error("trace blob `{name}` holds {actual} values but manifest extents imply {expected}")]
    ExtentMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },

    #[error("trace failed validation: {0}")]
    Validation(String),
}

impl TraceError {
    pub fn class(&self) -> &'static str {
        match self {
            TraceError::Manifest(_) | TraceError::Version { .. } => "trace-manifest",
            TraceError::MissingBlob(_) => "trace-missing-blob",
            TraceError::Truncated { .. } | TraceError::ChecksumMismatch { .. } => {
                "trace-integrity"
            }
            TraceError::ExtentMismatch { .. } => "trace-extent",
            TraceError::Validation(_) => "trace-validation",
        }
    }

    /// True for corruption of blob bytes (as opposed to a well-formed but
    /// inconsistent trace).
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            TraceError::Truncated { .. } | TraceError::ChecksumMismatch { .. }
        )
    }
}
