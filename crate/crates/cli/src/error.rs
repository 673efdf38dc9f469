use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("bad configuration: {0}")]
    BadSpec(String),

    #[error(transparent)]
    Core(#[from] lrfwi_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
