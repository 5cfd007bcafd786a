//! Batch front end for the alignment pipeline. Each subcommand reads and
//! writes fixed file names inside one output directory.

pub mod commands;
pub mod config;
pub mod layout;
pub mod render;

use thiserror::Error;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;
pub use layout::Layout;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] dma_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("gradient check failed: max relative error {max_rel_error:e} >= {tolerance:e}")]
    GradCheck { max_rel_error: f64, tolerance: f64 },
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            CliError::GradCheck { .. } => 2,
            _ => 1,
        }
    }
}
