use papred_comm::CommError;
use papred_core::{CoreError, SimError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("iteration {iteration}: rank {rank} produced a wrong result ({detail})")]
    Correctness { iteration: usize, rank: usize, detail: String },
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;
