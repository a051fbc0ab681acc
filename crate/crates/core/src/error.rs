use thiserror::Error;

/// Errors produced anywhere in the link simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("synchronization failed: peak-to-mean correlation ratio {ratio:.2} below threshold {threshold:.2}")]
    SyncFailure { ratio: f64, threshold: f64 },

    #[error("framing error: {0}")]
    Framing(String),

    #[error("channel estimation failed: {0}")]
    Estimation(String),

    #[error("symbol file format error: {0}")]
    Format(String),

    #[error("replay mismatch: {0}")]
    Replay(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
