//! One error type for everything user-facing; internal invariant
//! violations (shape bugs, NaNs from broken code) panic instead.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("payload length: expected {expected}, got {got}")]
    PayloadLength { expected: String, got: usize },

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("infeasible parameter range: {0}")]
    Infeasible(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(String),
}
