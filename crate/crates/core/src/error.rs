use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification of failures, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {}x{}, right is {}x{}", .left.0, .left.1, .right.0, .right.1)]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix data has {actual} entries, expected {rows}x{cols}")]
    BadLength {
        rows: usize,
        cols: usize,
        actual: usize,
    },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },

    #[error("input width mismatch: expected {expected}, got {actual}")]
    WidthMismatch { expected: usize, actual: usize },

    #[error("token batch has {rows} rows but {tags} segment tags")]
    TagCount { rows: usize, tags: usize },

    #[error("non-finite function value while perturbing entry ({row}, {col})")]
    NonFiniteEvaluation { row: usize, col: usize },

    #[error("forward cache does not belong to this layer state")]
    StaleCache,

    #[error("head index {index} out of range for {heads} heads")]
    HeadIndex { index: usize, heads: usize },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u64, expected: u64 },

    #[error("checkpoint tensor `{name}` has shape {found:?}, expected {expected:?}")]
    CheckpointShape {
        name: String,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("checkpoint tensor `{name}` has corrupt base64 payload: {reason}")]
    CheckpointEncoding { name: String, reason: String },

    #[error("checkpoint is missing tensor `{0}`")]
    CheckpointMissing(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("mask has no foreground pixels")]
    EmptyMask,

    #[error("malformed PGM: {0}")]
    Pgm(String),

    #[error("malformed trace CSV: {0}")]
    TraceCsv(String),

    #[error("no routing traces supplied")]
    EmptyTraces,

    #[error("traces disagree on head count ({0} vs {1})")]
    HeadCountMismatch(usize, usize),

    #[error("training diverged at step {step} (loss = {loss})")]
    Divergence { step: usize, loss: f64 },

    #[error("task sets do not match: {0}")]
    TaskMismatch(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFiniteEvaluation { .. } | Error::Divergence { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field,
            reason: reason.into(),
        }
    }
}
