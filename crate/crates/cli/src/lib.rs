//! Experiment orchestration for the `sllg` binary: configuration, single and
//! coupled runs, ensembles, constant and Wente sweeps, artifact writing and
//! the acceptance suite.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;

use sllg_core::bubble::BubbleError;
use sllg_core::diagnostics::DiagnosticsError;
use sllg_core::FlowError;
use thiserror::Error;

pub use config::SimConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort at step {step}: {message}")]
    Numerical { step: u64, message: String },
    #[error("{0}")]
    Statistics(#[from] DiagnosticsError),
    #[error("{failed} acceptance criteria failed")]
    VerifyFailed { failed: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    /// Process exit status: 2 for configuration, 3 for numerical aborts,
    /// 1 for failed or unavailable verdicts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numerical { .. } => 3,
            Self::Statistics(_) | Self::VerifyFailed { .. } => 1,
            Self::Io(_) | Self::Internal(_) => 1,
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e.step() {
            Some(step) => Self::Numerical {
                step,
                message: e.to_string(),
            },
            None => Self::Config(e.to_string()),
        }
    }
}

impl From<BubbleError> for CliError {
    fn from(e: BubbleError) -> Self {
        match e {
            BubbleError::Flow(f) => f.into(),
            other => Self::Config(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Internal(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Internal(e.to_string())
    }
}
