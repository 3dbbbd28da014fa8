use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Training,
    Evaluation,
}

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's preconditions (length mismatch, empty input, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("missing file: {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported schema version {found} in {} (expected {expected})", path.display())]
    SchemaVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("shape mismatch for {}: declared {declared:?}, found {found:?}", path.display())]
    ShapeMismatch {
        path: PathBuf,
        declared: [usize; 3],
        found: [usize; 3],
    },

    #[error("training error: {0}")]
    Training(String),

    #[error("missing checkpoint: {}", path.display())]
    MissingCheckpoint { path: PathBuf },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Contract(_) | Error::Config(_) => ErrorKind::Config,
            Error::Data(_)
            | Error::MissingFile { .. }
            | Error::Io { .. }
            | Error::SchemaVersion { .. }
            | Error::ShapeMismatch { .. } => ErrorKind::Data,
            Error::Training(_) | Error::MissingCheckpoint { .. } | Error::Checkpoint(_) => {
                ErrorKind::Training
            }
            Error::Evaluation(_) | Error::UndefinedMetric(_) => ErrorKind::Evaluation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }
}

macro_rules! ensure_contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_contract;
