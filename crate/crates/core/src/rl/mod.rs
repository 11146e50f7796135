//! Actor-critic PPO with GAE, hand-written reverse-mode gradients and Adam.

mod adam;
pub mod bandit;
pub mod checkpoint;
mod dist;
mod gae;
mod loss;
mod net;
mod ppo;

pub use adam::Adam;
pub use dist::{entropy, log_softmax, sample_action, sample_index, softmax, ActionSample};
pub use gae::{compute_gae, AdvantageEstimates};
pub use loss::{clipped_surrogate, consensus_term, total_loss, LossBreakdown, Samples, ValuePenalty};
pub use net::{Forward, Layout, PolicyParams};
pub use ppo::{IterStats, Ppo, Trajectory};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("environment error: {0}")]
    Env(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub c1: f64,
    pub c2: f64,
    /// Extra multiplier on the entropy bonus; the bonus weight is `c2 * beta_entropy`.
    pub beta_entropy: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub n_actors: usize,
    pub horizon: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
}

impl Default for PpoHyper {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip_eps: 0.2,
            c1: 0.5,
            c2: 0.01,
            beta_entropy: 1.0,
            learning_rate: 3e-3,
            epochs: 4,
            minibatch_size: 64,
            n_actors: 4,
            horizon: 128,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            hidden: vec![64, 64],
        }
    }
}

impl PpoHyper {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidHyper(m.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return bad("gamma and lambda must lie in [0, 1]");
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.c1 < 0.0 || self.c2 < 0.0 || self.beta_entropy < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.n_actors == 0 || self.horizon == 0 {
            return bad("epochs, minibatch_size, n_actors and horizon must be positive");
        }
        if self.max_grad_norm <= 0.0 {
            return bad("max_grad_norm must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        Ok(())
    }
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// A rollout source with a factorized two-index discrete action.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    /// Sizes of the two action heads.
    fn action_dims(&self) -> (usize, usize);
    fn reset(&mut self) -> Result<Vec<f64>, RlError>;
    fn step(&mut self, action: (usize, usize)) -> Result<StepOutcome, RlError>;
}
