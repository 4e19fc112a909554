//! Verbs behind the `tlscm` binary, usable as a library.

pub mod bench;
pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use bench::{cmd_benchmark, BenchmarkReport, CellReport, RunReport};
pub use commands::{cmd_evaluate, cmd_fit, cmd_generate, Overrides};
pub use config::{BenchmarkSection, EvaluateSection, FitSection, Method, RunConfig};

/// Failure of a verb, split by who has to act on it.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, unreadable input or an unwritable path.
    #[error("{0}")]
    Input(String),
    #[error("{message}")]
    Numerical { message: String, trace: Option<PathBuf> },
}

impl CliError {
    /// 2 for input errors, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical { .. } => 3,
        }
    }
}

impl From<tlscm::Error> for CliError {
    fn from(e: tlscm::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical {
                message: e.to_string(),
                trace: None,
            }
        } else {
            CliError::Input(e.to_string())
        }
    }
}
