use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("node index {index} out of range for network with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("invalid network: {0}")]
    Network(String),

    #[error("line {line}: {message}")]
    Schema { line: u64, message: String },

    #[error("ingestion error: {0}")]
    Ingest(String),

    #[error("no records")]
    NoRecords,

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid model specification: {0}")]
    Spec(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical {
            iteration: 0,
            message: message.into(),
        }
    }

    /// Attach an iteration index to a numerical failure.
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical { iteration, message },
            other => other,
        }
    }
}
