use thiserror::Error;

/// Failures reading or validating a model checkpoint.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a diffcomp checkpoint)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("architecture mismatch: {0}")]
    Architecture(String),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl CheckpointError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u32 {
        match self {
            CheckpointError::BadMagic => 1,
            CheckpointError::Version { .. } => 2,
            CheckpointError::Truncated => 3,
            CheckpointError::Checksum => 4,
            CheckpointError::Architecture(_) => 5,
            CheckpointError::Corrupt(_) => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("time index {t} outside 1..={steps}")]
    TimeIndex { t: usize, steps: usize },
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("capability error: {0}")]
    Capability(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Metric(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
