use std::path::PathBuf;

use ngsc_codec::CodecError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] ngsc_tensor::TensorError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no usable images in {} ({skipped} skipped)", dir.display())]
    NoUsableImages { dir: PathBuf, skipped: usize },
    #[error("{}: malformed CSV: {source}", path.display())]
    Csv { path: PathBuf, source: CodecError },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
