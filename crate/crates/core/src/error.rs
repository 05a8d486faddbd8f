use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("structural error: {0}")]
    Structural(String),
    #[error("indeterminate numerical rank: {0}")]
    Indeterminate(String),
    #[error("depth cap {cap} exceeded before the family closed ({found} members found)")]
    DepthCapExceeded { cap: usize, found: usize },
    #[error("not modular: {0}")]
    NotModular(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("size limit: {0}")]
    Size(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("unknown built-in `{0}`")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
