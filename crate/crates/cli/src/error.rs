use thiserror::Error;

/// Failure of a subcommand, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or input file contents.
    #[error("config error: {0}")]
    Config(String),
    /// Reading or writing files failed.
    #[error("i/o error: {0}")]
    Io(String),
    /// A computation failed on valid input.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn config(key: &str, msg: impl std::fmt::Display) -> Self {
        CliError::Config(format!("{key}: {msg}"))
    }
}

impl From<rescaled_gp::Error> for CliError {
    fn from(e: rescaled_gp::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
