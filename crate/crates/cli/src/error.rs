use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Already carries its `file:line:` anchor.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] shelab::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
