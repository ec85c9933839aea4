use std::path::PathBuf;

use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),

    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Numerical(#[from] freewtd_core::error::Error),

    #[error("{0}")]
    Audit(String),

    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 validation, 2 numerical failure, 3 audit or verification failure.
    pub fn exit_code(&self) -> i32 {
        use freewtd_core::error::Error as E;
        match self {
            CliError::Config(_) | CliError::Validation(_) | CliError::Io { .. } => 1,
            CliError::Numerical(E::InvalidSpec { .. } | E::InvalidState(_) | E::OracleSize { .. } | E::NotSteadyState) => 1,
            CliError::Numerical(_) => 2,
            CliError::Audit(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
