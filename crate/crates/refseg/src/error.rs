use thiserror::Error;

/// Errors surfaced by the pipeline. Variants map onto the CLI exit codes:
/// configuration problems exit 1, data problems exit 2, runtime failures
/// (including NaN aborts) exit 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Internal(_) | Error::Runtime(_) => 3,
        }
    }
}
