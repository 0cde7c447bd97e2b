//! Scenario runner behind the `feller` binary.

pub mod config;
pub mod runner;
pub mod scenarios;

use feller_core::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("unknown scenario `{0}` (try `feller list`)")]
    UnknownScenario(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Numerical breakdowns, as opposed to bad input.
pub fn is_divergence(e: &Error) -> bool {
    matches!(
        e,
        Error::SeriesContraction { .. }
            | Error::NonConvergent { .. }
            | Error::NeumannDivergence { .. }
            | Error::NonFinitePath { .. }
            | Error::ResidualTooLarge { .. }
    )
}

impl CliError {
    /// 2 for usage and configuration problems, 3 for numerical divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if is_divergence(e) => 3,
            _ => 2,
        }
    }
}

pub use runner::{run_scenario, RunOptions, RunReport};
