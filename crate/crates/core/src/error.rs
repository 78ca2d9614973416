use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive semi-definite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is singular or not positive definite")]
    Singular,

    #[error("non-finite entry in input")]
    NonFinite,

    #[error("value {value} lies outside the clip radius {radius}")]
    OutOfRange { value: f64, radius: f64 },

    #[error("insufficient budget: {bits} bits cannot carry {entries} symbols")]
    InsufficientBudget { bits: u64, entries: usize },

    #[error("codec alphabet {0} does not fit in 32 bits")]
    AlphabetOverflow(u64),

    #[error("malformed payload: {0}")]
    Malformed(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
