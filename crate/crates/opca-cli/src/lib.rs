//! Command implementations, configuration and checkpoint formats behind the
//! `opca` binary. Everything here is deterministic: fixed seeds and identical
//! configs produce byte-identical outputs.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvfmt;
pub mod grid;

use opca_core::CoreError;
use thiserror::Error;

/// Top-level error split by exit class: 1 config, 2 data, 3 numerical.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Classify a core error raised while acting on configuration-derived values.
pub fn config_err(e: CoreError) -> CliError {
    match e {
        CoreError::Numerical(m) => CliError::Numerical(m),
        other => CliError::Config(other.to_string()),
    }
}

/// Classify a core error raised while reading or producing data.
pub fn data_err(e: CoreError) -> CliError {
    match e {
        CoreError::Numerical(m) => CliError::Numerical(m),
        other => CliError::Data(other.to_string()),
    }
}
