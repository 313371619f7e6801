use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Quantity is undefined for the given input (e.g. AoP of unpolarized light).
    #[error("undefined for input: {0}")]
    Undefined(String),

    /// Invalid configuration, schema violation or dimension mismatch.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors a caller should report as a configuration problem.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json(_) | Error::Format(_))
    }
}
