use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by any part of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or image dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A configuration value is out of the supported range.
    #[error("configuration error: {0}")]
    Config(String),

    /// The sampling ratio admits no power-of-two scale factor.
    #[error("unsupported sampling ratio {0}: no power-of-two scale factor s satisfies 1/s^2 > ratio (ratio must be below 0.25)")]
    UnsupportedRatio(f64),

    /// An input image cannot be used (e.g. too small for the requested crop).
    #[error("data error: {0}")]
    Data(String),

    /// Optimizer state is inconsistent (e.g. stepping without gradients).
    #[error("state error: {0}")]
    State(String),

    /// A serialized file is malformed.
    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    /// Underlying I/O failure, with the offending path.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
