//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// The CLI maps [`Error::Config`], [`Error::UnknownKey`] and
/// [`Error::InvalidArgument`] to exit code 2 and everything else to exit
/// code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric degeneracy: {0}")]
    NumericDegenerate(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("sampling exhausted: {0}")]
    SamplingExhausted(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Exit status the CLI reports for this error: 2 for configuration
    /// problems, 1 for pipeline failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownKey(_) | Error::InvalidArgument(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
