//! Run orchestration behind the `dnls` binary: configuration parsing,
//! initial-field descriptors, the five commands and artifact bookkeeping.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod init;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::run;
pub use config::{Command, RunConfig};

/// Exit status for configuration and input errors.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for numerical failures; partial artifacts are kept.
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

/// Command-line inputs of one run.
#[derive(Clone, Debug)]
pub struct RunArgs {
    pub command: Command,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
}

/// Sizes the global rayon pool from `DNLS_THREADS` when it is set.
pub fn apply_thread_limit(var: Option<&str>) -> Result<(), CliError> {
    let Some(v) = var else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Config(format!("DNLS_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("DNLS_THREADS: {e}")))
}
