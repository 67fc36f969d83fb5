use thiserror::Error;
use vmbeam_core::CoreError;
use vmbeam_tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{op}: shape mismatch ({msg})")]
    Shape { op: &'static str, msg: String },
    #[error("zero-power reference in {0}")]
    ZeroReference(&'static str),
    #[error("non-finite {what} at step {step}: {detail}")]
    NonFinite {
        step: u64,
        what: &'static str,
        detail: String,
    },
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn shape(op: &'static str, msg: impl Into<String>) -> ModelError {
    ModelError::Shape { op, msg: msg.into() }
}
