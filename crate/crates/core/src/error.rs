use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    LayerDim {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dim(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("SMILES parse error at byte {offset}: {msg}")]
    Smiles { offset: usize, msg: String },

    #[error("{path}:{row}: {msg}")]
    Table {
        path: String,
        row: usize,
        msg: String,
    },

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("no eligible retrieval candidate for query {0}")]
    NoCandidate(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
