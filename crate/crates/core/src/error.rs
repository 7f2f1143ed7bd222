use thiserror::Error;

/// Errors produced anywhere in the enhancement pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),

    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("weight file truncated at byte offset {offset}: {what}")]
    Truncated { offset: usize, what: String },

    #[error("malformed weight file at byte offset {offset}: {what}")]
    Malformed { offset: usize, what: String },

    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("stream is closed")]
    StreamClosed,

    #[error("streaming requires cumulative attention mode")]
    NotStreamable,

    #[error("undefined input: {0}")]
    Undefined(String),

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("audio format: {0}")]
    Audio(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
