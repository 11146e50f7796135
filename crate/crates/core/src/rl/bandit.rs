//! A two-armed bandit with a known optimum, for checking the learner.

use super::{Environment, Layout, RlError, StepOutcome};

/// Arm 0 pays `rewards[0]`, arm 1 pays `rewards[1]`; every step ends the
/// episode. The second action head has a single option.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoArmedBandit {
    pub rewards: [f64; 2],
}

impl Default for TwoArmedBandit {
    fn default() -> Self {
        Self { rewards: [1.0, 0.0] }
    }
}

impl TwoArmedBandit {
    pub fn layout(hidden: &[usize]) -> Layout {
        Layout::new(1, hidden, 2, 1)
    }

    pub fn optimum(&self) -> f64 {
        self.rewards[0].max(self.rewards[1])
    }
}

impl Environment for TwoArmedBandit {
    fn observation_dim(&self) -> usize {
        1
    }

    fn action_dims(&self) -> (usize, usize) {
        (2, 1)
    }

    fn reset(&mut self) -> Result<Vec<f64>, RlError> {
        Ok(vec![1.0])
    }

    fn step(&mut self, action: (usize, usize)) -> Result<StepOutcome, RlError> {
        let reward = *self
            .rewards
            .get(action.0)
            .ok_or_else(|| RlError::Env(format!("arm {} does not exist", action.0)))?;
        Ok(StepOutcome {
            observation: vec![1.0],
            reward,
            done: true,
        })
    }
}
