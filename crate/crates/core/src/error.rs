use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    /// Noise level is defined relative to a signal of zero energy.
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("dataset too large: {samples} samples need {bytes} bytes (limit {limit})")]
    DatasetTooLarge { samples: u64, bytes: u64, limit: u64 },

    #[error("config key `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("config and dataset disagree on `{key}`: config has {config}, dataset has {dataset}")]
    ConfigDatasetConflict {
        key: String,
        config: String,
        dataset: String,
    },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn config(key: &str, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigDatasetConflict { .. } | Error::InvalidArgument(_) => 2,
            Error::DatasetTooLarge { .. } => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::NumericFailure(_) | Error::DegenerateSignal(_) | Error::UndefinedMetric(_) => 4,
        }
    }
}
