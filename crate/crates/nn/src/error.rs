use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
