use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis, optimization and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported sample rate {found} Hz (expected {expected} Hz, no resampling is performed)")]
    UnsupportedRate { found: u32, expected: u32 },

    #[error("failed to parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error("signal too short: {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("frequency {0} Hz outside [0, 22050] Hz")]
    FrequencyOutOfRange(f64),

    #[error("silent signal cannot be normalized")]
    SilentSignal,

    #[error("unknown environment `{0}`")]
    UnknownEnvironment(String),

    #[error("unknown headphone profile `{0}`")]
    UnknownHeadphone(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("statistics: {0}")]
    Stats(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
