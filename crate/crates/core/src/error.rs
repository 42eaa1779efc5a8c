use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
