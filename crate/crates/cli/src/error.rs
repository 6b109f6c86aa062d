use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing artifact {path} (run `dte {command}` first)")]
    Missing { path: PathBuf, command: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 5,
        }
    }

    pub fn missing(path: impl Into<PathBuf>, command: impl Into<String>) -> Self {
        CliError::Missing {
            path: path.into(),
            command: command.into(),
        }
    }
}

impl From<dte_core::Error> for CliError {
    fn from(e: dte_core::Error) -> Self {
        use dte_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Io { .. } | E::Wav(_) | E::BadMagic { .. } | E::Version { .. } => CliError::Io(msg),
            E::MissingFile { path, .. } => CliError::missing(path, "synth"),
            E::NonFinite(_) | E::Diverged { .. } | E::Singular(_) | E::Rank { .. } | E::NoPath { .. } => {
                CliError::Numeric(msg)
            }
            _ => CliError::Config(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
