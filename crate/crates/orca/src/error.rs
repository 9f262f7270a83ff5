use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("load error: {0}")]
    Load(String),
    #[error(transparent)]
    Core(#[from] orca_core::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
