//! Scenarios, training and evaluation runs, metrics, reports and plots.

pub mod manifest;
pub mod metrics;
pub mod plot;
pub mod report;
pub mod run;
pub mod scenario;

pub use manifest::Manifest;
pub use metrics::{cdf, convergence_times, estimation_accuracy, peak_rtt_us, ConvergenceSpec};
pub use report::{compare, Comparison, MetricsReport};
pub use run::{eval, train, EvalOutput, Policy, TrainOptions, TrainOutput};
pub use scenario::{EventSpec, FlowSpec, LinkToml, MetricsSpec, RandomSpec, ScenarioSpec, TrainSpec};

use thiserror::Error;

use crate::agents::AgentError;
use crate::env::EnvError;
use crate::netsim::SimError;
use crate::rl::RlError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Configuration problems map to exit code 2, everything else to 3.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Parse(_) => 2,
            _ => 3,
        }
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        HarnessError::Runtime(e.to_string())
    }
}

impl From<EnvError> for HarnessError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<RlError> for HarnessError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::InvalidHyper(m) => HarnessError::Config(m),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Runtime(other.to_string()),
        }
    }
}
