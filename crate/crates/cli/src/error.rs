use std::path::PathBuf;

use simex_core::SimexError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {field}: {message}")]
    Config { path: PathBuf, field: String, message: String },

    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: SimexError,
    },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status: 1 usage, 2 config, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } | CliError::Io { .. } => 3,
        }
    }

    pub fn config(path: impl Into<PathBuf>, field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: path.into(),
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Attach a context string to core and I/O errors.
pub trait Context<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for Result<T, SimexError> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Runtime {
            context: context(),
            source,
        })
    }
}

impl<T> Context<T> for Result<T, std::io::Error> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Io {
            context: context(),
            source,
        })
    }
}
