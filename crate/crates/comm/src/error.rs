use std::time::Duration;

use papred_core::CoreError;
use thiserror::Error;

use crate::frame::FrameError;

#[derive(Debug, Error)]
pub enum CommError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("timed out after {after:?} waiting on rank {peer}: {what}")]
    Timeout { peer: usize, after: Duration, what: &'static str },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state error: {0}")]
    State(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CommError>;
