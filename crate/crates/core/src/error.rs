use thiserror::Error;

/// Error type shared across the whole crate.
#[derive(Debug, Error)]
pub enum FearError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("startup error: {0}")]
    Startup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FearError>;

impl FearError {
    pub fn dim(msg: impl Into<String>) -> Self {
        FearError::Dimension(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        FearError::Contract(msg.into())
    }
}
