use thiserror::Error;

/// Failure of a CLI command, partitioned by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Checkpoint(_) => 4,
        }
    }

    /// Classifies a core error raised while reading or preparing data.
    pub fn data(context: &str, err: gmvae::Error) -> Self {
        match err {
            gmvae::Error::Config(m) => CliError::Config(format!("{context}: {m}")),
            other => CliError::Data(format!("{context}: {other}")),
        }
    }

    /// Classifies a core error raised while training or evaluating.
    pub fn runtime(context: &str, err: gmvae::Error) -> Self {
        match err {
            gmvae::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(format!("{context}: {other}")),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
