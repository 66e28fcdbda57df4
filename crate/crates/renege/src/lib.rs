//! Command-line front end for `renege-core`: JSON configs, parallel
//! simulation replications, verification checks and CSV/JSON output.

pub mod checks;
pub mod commands;
pub mod config;
pub mod output;
pub mod replicate;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Model(String),
    #[error("verification failed: {0}")]
    Verify(String),
    #[error("{0}")]
    Solver(#[from] renege_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Model(_) => 3,
            CliError::Solver(renege_core::Error::NotImrl) => 3,
            CliError::Solver(renege_core::Error::InvalidParameter(_)) => 2,
            CliError::Solver(_) => 3,
        }
    }
}
