//! Scenario runner for the legged estimator: simulates a scenario, feeds the
//! estimator and the legged-odometry baseline, writes CSV logs and computes
//! error metrics.

use std::path::PathBuf;

use legged_sim::SimError;
use thiserror::Error;

pub mod config;
pub mod metrics;
pub mod pipeline;
pub mod records;

pub use config::{EstimatorConfig, Mode, RunConfig};
pub use metrics::{compute_metrics, RunMetrics};
pub use pipeline::{run, RunOutput};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("simulation failed: {0}")]
    Sim(#[from] SimError),

    #[error("estimator failed at step {step}: {source}")]
    Estimator { step: usize, source: legged_mekf::Error },

    #[error("estimator diverged at step {step}")]
    Diverged { step: usize },

    #[error("misaligned logs: {0}")]
    Misaligned(String),

    #[error("{}: {message}", path.display())]
    Csv { path: PathBuf, message: String },
}

impl From<legged_mekf::Error> for HarnessError {
    fn from(e: legged_mekf::Error) -> Self {
        Self::Invalid(e.to_string())
    }
}
