//! Command-line front end: configuration, the `slq`, `probe` and
//! `compare-ortho` pipelines, and their output files.

pub mod artifact;
pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{cmd_compare_ortho, cmd_probe, cmd_slq};
pub use config::{ConfigError, Overrides, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{message}")]
    Breakdown {
        message: String,
        /// Partial artifact, when it could be written.
        artifact: Option<PathBuf>,
    },
    #[error(transparent)]
    Core(slq_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<slq_core::Error> for CliError {
    fn from(e: slq_core::Error) -> Self {
        match e {
            slq_core::Error::Breakdown { reason, .. } => CliError::Breakdown {
                message: reason,
                artifact: None,
            },
            slq_core::Error::Numerical(message) => CliError::Breakdown {
                message,
                artifact: None,
            },
            slq_core::Error::Io(e) => CliError::Io(e),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical breakdown, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Breakdown { .. } => 3,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}
