//! Error type shared by every module.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a precondition (bad dimension, out-of-range index, bad flag).
    #[error("usage error: {0}")]
    Usage(String),

    /// A numerical procedure failed or hit an undefined case (zero-norm layer, divergence).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Spectral norm did not converge after all restarts.
    #[error("spectral norm did not converge: estimate {estimate}, residual {residual:e}")]
    NoConvergence { estimate: f64, residual: f64 },

    /// Malformed input file.
    #[error("format error in {what} at {location}: {message}")]
    Format {
        what: String,
        location: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn format(
        what: impl Into<String>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Format {
            what: what.into(),
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 usage, 3 numeric failure.
    ///
    /// Format and I/O problems are reported as usage errors since they stem
    /// from the files the caller pointed at.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) | Error::NoConvergence { .. } => 3,
            Error::Usage(_) | Error::Format { .. } | Error::Io { .. } => 1,
        }
    }
}
