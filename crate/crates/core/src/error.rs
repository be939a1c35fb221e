use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("stream corruption: {0}")]
    Corrupt(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scheduler is shutting down")]
    Shutdown,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
