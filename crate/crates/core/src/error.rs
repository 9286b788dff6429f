use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("empty axis in {0}")]
    EmptyAxis(&'static str),
    #[error("degenerate bounding box {0}")]
    DegenerateBox(String),
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = MimError> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(MimError::Shape(msg.into()))
}
