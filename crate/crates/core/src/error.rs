//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by motion I/O, model construction, and numeric routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor, frame, or feature vector had the wrong size.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: String,
        actual: String,
    },

    /// An index was outside its valid range.
    #[error("index out of range in {what}: {index} not in [0, {len})")]
    IndexOutOfRange { what: String, index: usize, len: usize },

    /// A vector that must be normalizable was too close to zero or to a
    /// parallel companion.
    #[error("degenerate input in {what}: {detail}")]
    Degenerate { what: String, detail: String },

    /// Generic argument validation failure.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Motion or checkpoint file header could not be parsed.
    #[error("malformed header in {path}: {detail}")]
    MalformedHeader { path: String, detail: String },

    /// File ended before the payload announced by its header.
    #[error("truncated payload in {path}: expected {expected} bytes, got {actual}")]
    TruncatedPayload {
        path: String,
        expected: usize,
        actual: usize,
    },

    /// Checkpoint was produced under an incompatible configuration.
    #[error("checkpoint incompatible: {0}")]
    CheckpointMismatch(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn dim(what: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn degenerate(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Degenerate { what: what.into(), detail: detail.into() }
    }

    pub fn malformed_header(path: impl AsRef<std::path::Path>, detail: impl Into<String>) -> Self {
        Error::MalformedHeader {
            path: path.as_ref().display().to_string(),
            detail: detail.into(),
        }
    }

    pub fn truncated(path: impl AsRef<std::path::Path>, expected: usize, actual: usize) -> Self {
        Error::TruncatedPayload {
            path: path.as_ref().display().to_string(),
            expected,
            actual,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::IndexOutOfRange { .. }
                | Error::Degenerate { .. }
                | Error::InvalidArgument(_)
                | Error::MalformedHeader { .. }
                | Error::TruncatedPayload { .. }
                | Error::CheckpointMismatch(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
