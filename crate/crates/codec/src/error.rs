use ngsc_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("config: {0}")]
    Config(String),

    #[error("{op}: extent mismatch: {detail}")]
    Extent { op: &'static str, detail: String },

    #[error("range coder: {0}")]
    Coder(String),

    #[error("bitstream: {0}")]
    Bitstream(String),

    #[error("model hash mismatch: stream was written by {stream:016x}, loaded model is {model:016x}")]
    ModelMismatch { stream: u64, model: u64 },

    #[error("training diverged at step {step}: non-finite loss")]
    Diverged { step: usize },

    #[error("BD-rate: {0}")]
    BdRate(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CodecError>;

pub(crate) fn extent(op: &'static str, detail: impl Into<String>) -> CodecError {
    CodecError::Extent { op, detail: detail.into() }
}
