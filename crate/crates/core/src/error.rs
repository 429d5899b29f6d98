use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A size guard refused the request (brute-force enumeration, qubit count).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Non-finite values or norm drift during integration.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("unsupported format `{found}` (expected `{expected}`)")]
    Format {
        found: String,
        expected: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn length_mismatch(what: &str, expected: usize, found: usize) -> Self {
        Error::InvalidInput(format!("{what}: expected length {expected}, found {found}"))
    }
}
