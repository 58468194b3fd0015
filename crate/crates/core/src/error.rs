use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("context overflow: {len} positions exceed context length {limit} for prompt {prompt:?}")]
    ContextOverflow { len: usize, limit: usize, prompt: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by user-supplied configuration or inputs, as
    /// opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidInput(_) | Error::Format(_) | Error::Mismatch(_))
    }
}
