use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the similarity pipeline.
#[derive(Debug, Error)]
pub enum SimexError {
    #[error("shape mismatch in {context}: expected {expected:?}, received {received:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        received: Vec<usize>,
    },

    #[error("backward pass for {0} called without a matching forward cache")]
    MissingCache(&'static str),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported input shape {0:?}")]
    UnsupportedShape(Vec<usize>),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("loss kind mismatch: model trained with {trained}, evaluation requested {requested}")]
    LossKindMismatch { trained: String, requested: String },

    #[error("malformed IDX data in {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error("training of reference `{reference}` failed: {source}")]
    Reference {
        reference: String,
        #[source]
        source: Box<SimexError>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SimexError> = std::result::Result<T, E>;

impl SimexError {
    pub(crate) fn shape(context: &'static str, expected: &[usize], received: &[usize]) -> Self {
        SimexError::ShapeMismatch {
            context,
            expected: expected.to_vec(),
            received: received.to_vec(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        SimexError::InvalidArgument(msg.into())
    }
}
