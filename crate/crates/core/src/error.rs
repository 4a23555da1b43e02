use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, ranges or values that violate an operation's precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An iterative numerical routine hit its iteration cap.
    #[error("numerical failure: {what} did not converge (residual {residual:e})")]
    Numerical { what: &'static str, residual: f64 },

    /// A loss or gradient became non-finite during training.
    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: usize, reason: String },

    /// A guaranteed invariant was observed broken. Always an implementation bug.
    #[error("invariant breach: {0}")]
    InvariantBreach(String),

    /// Malformed configuration text.
    #[error("config error (line {line}, key `{key}`): {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 2,
            Error::Diverged { .. } => 3,
            Error::InvariantBreach(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
