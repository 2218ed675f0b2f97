use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Unified error type for the toolkit.
///
/// CLI exit codes are derived from the variant via [`Error::exit_code`]:
/// argument errors map to 2, staging errors to 3, training/numeric failures
/// to 4, and I/O or artifact corruption to 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to load {path}: {msg}")]
    Load { path: PathBuf, msg: String },

    #[error("dataset item {index} unreadable at {path}: {msg}")]
    CorruptItem {
        index: usize,
        path: PathBuf,
        msg: String,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training failed at epoch {epoch}, step {step}: {msg}")]
    Training {
        epoch: usize,
        step: usize,
        msg: String,
    },

    #[error("encoder state error: {0}")]
    State(String),

    #[error("staging error: missing artifact `{0}`")]
    Staging(String),

    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    Incompatible { found: u32, expected: u32 },

    #[error("checkpoint integrity error at {path}: {msg}")]
    Integrity { path: PathBuf, msg: String },

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}

impl Error {
    /// Wrap a `std::io::Error` with the path it occurred at.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Staging(_) => 3,
            Error::Training { .. } | Error::Numeric(_) | Error::State(_) => 4,
            Error::Io { .. }
            | Error::Load { .. }
            | Error::CorruptItem { .. }
            | Error::Incompatible { .. }
            | Error::Integrity { .. } => 5,
            Error::Tensor(_) => 1,
        }
    }
}
