//! Crate-wide error type and result alias.
//!
//! Errors are grouped into three classes that the command-line front-end
//! maps onto process exit codes: usage errors (1), data errors (2) and
//! numeric failures (3).

use std::path::PathBuf;

use thiserror::Error;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum KgatError {
    /// Bad command-line arguments or an unusable flag combination.
    #[error("usage error: {0}")]
    Usage(String),

    /// I/O failure while reading or writing an artifact.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not parse.
    #[error("parse error in {path}, line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// Structurally valid input that violates a documented data contract.
    #[error("invalid data: {0}")]
    Data(String),

    /// A checkpoint or config does not match what the caller expects.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// Softmax or a similar reduction was asked to normalize over nothing.
    #[error("empty support: no unmasked positions to normalize over")]
    EmptySupport,

    /// Non-finite values, failed gradient checks, diverged training.
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl KgatError {
    /// Process exit code for the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            KgatError::Usage(_) => 1,
            KgatError::Io { .. }
            | KgatError::Parse { .. }
            | KgatError::Data(_)
            | KgatError::ConfigMismatch(_) => 2,
            KgatError::EmptySupport | KgatError::Numeric(_) => 3,
        }
    }

    /// Convenience constructor for I/O errors tagged with their path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgatError::Io {
            path: path.into(),
            source,
        }
    }
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, KgatError>;
