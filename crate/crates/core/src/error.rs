use std::path::PathBuf;

/// Failure categories shared by every module of the kit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes, channel counts or configuration fields that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A NaN or infinity appeared in a computed value.
    #[error("numeric error in {op}: non-finite value at flat index {index}")]
    NonFinite { op: String, index: usize },

    /// Input files that cannot be decoded.
    #[error("ingestion error in {path} at byte {offset}: {reason}")]
    Ingest { path: PathBuf, offset: u64, reason: String },

    /// Weight containers that do not match the expected layout or model.
    #[error("weight file error: {0}")]
    Weights(String),

    /// Bad command-line or API usage (unknown format, unknown suite, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
