use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or unsupported input data (CSV contents, column kinds, missing values).
    #[error("data format error: {0}")]
    DataFormat(String),

    /// A caller violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An estimator could not produce a result.
    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
