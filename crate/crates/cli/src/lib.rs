//! `dpnb` command-line front end: dataset caching, training, k-fold
//! evaluation and grid sweeps driven by a TOML run configuration.

pub mod commands;
pub mod config;

use std::fmt;

/// A failure classified by exit code: 2 for bad input or configuration,
/// 1 for failures during computation.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Compute(_) => 1,
        }
    }

    pub(crate) fn usage(e: impl fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub(crate) fn compute(e: impl fmt::Display) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Compute(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}
