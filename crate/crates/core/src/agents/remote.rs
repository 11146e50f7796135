//! RL-agent side of the host interface.

use super::transport::Transport;
use super::wire::{Payload, StatsBody, WireMessage};
use super::AgentError;
use crate::env::{build_state, shaped_reward, EnvConfig, RewardOutcome, StateTable};
use crate::rl::{Environment, RlError, StepOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteStep {
    pub state: StateTable,
    pub reward: RewardOutcome,
    pub done: bool,
    pub stats: StatsBody,
}

/// Environment whose simulator lives behind a transport. State and reward
/// are rebuilt locally from STATS exactly as `CcEnv` builds them.
pub struct RemoteEnv {
    cfg: EnvConfig,
    agent_id: u32,
    link: Box<dyn Transport>,
    epoch: u64,
    step: u64,
    awaiting: Option<bool>,
}

impl RemoteEnv {
    pub fn new(cfg: EnvConfig, agent_id: u32, link: Box<dyn Transport>) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            agent_id,
            link,
            epoch: 0,
            step: 0,
            awaiting: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    fn send(&mut self, payload: Payload, is_reset: bool) -> Result<(), AgentError> {
        if self.awaiting.is_some() {
            return Err(AgentError::Protocol("previous request still pending".into()));
        }
        self.epoch += 1;
        self.link.send(&WireMessage {
            agent_id: self.agent_id,
            epoch: self.epoch,
            payload,
        })?;
        self.awaiting = Some(is_reset);
        Ok(())
    }

    pub fn send_hello(&mut self) -> Result<(), AgentError> {
        self.send(Payload::Hello, true)
    }

    pub fn send_action(&mut self, action: (usize, usize)) -> Result<(), AgentError> {
        let (rt_s, bw) = self.cfg.grid.decode(action.0, action.1)?;
        self.send(
            Payload::Params {
                rt_window_ms: (rt_s * 1_000.0).round() as u32,
                bw_window_rounds: bw as u32,
            },
            false,
        )
    }

    /// Waits for the answer to the pending HELLO or PARAMS.
    pub fn recv(&mut self) -> Result<RemoteStep, AgentError> {
        let is_reset = self
            .awaiting
            .take()
            .ok_or_else(|| AgentError::Protocol("nothing pending".into()))?;
        let msg = self.link.recv()?;
        if msg.agent_id != self.agent_id || msg.epoch != self.epoch {
            return Err(AgentError::Protocol(format!(
                "reply for agent {} epoch {}, expected {} / {}",
                msg.agent_id, msg.epoch, self.agent_id, self.epoch
            )));
        }
        let stats = match msg.payload {
            Payload::Stats(s) => s,
            Payload::Error { code, message } => return Err(AgentError::Remote { code, message }),
            other => return Err(AgentError::Protocol(format!("unexpected {:?} reply", other.kind()))),
        };
        let reward = if is_reset {
            self.step = 0;
            RewardOutcome {
                reward: 0.0,
                no_data: true,
            }
        } else {
            self.step += 1;
            shaped_reward(
                &stats.interval,
                &stats.pid,
                self.cfg.t1_us() as f64 / 1e6,
                self.cfg.robustness.moving_window,
                &self.cfg.reward,
            )?
        };
        let state = build_state(&stats.observations, self.cfg.f_max, &self.cfg.scales, self.cfg.state_seed, self.step);
        Ok(RemoteStep {
            state,
            reward,
            done: stats.done,
            stats,
        })
    }
}

fn rl_err(e: AgentError) -> RlError {
    RlError::Env(e.to_string())
}

impl Environment for RemoteEnv {
    fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    fn action_dims(&self) -> (usize, usize) {
        self.cfg.grid.dims()
    }

    fn reset(&mut self) -> Result<Vec<f64>, RlError> {
        self.send_hello().map_err(rl_err)?;
        Ok(self.recv().map_err(rl_err)?.state.flatten())
    }

    fn step(&mut self, action: (usize, usize)) -> Result<StepOutcome, RlError> {
        self.send_action(action).map_err(rl_err)?;
        let s = self.recv().map_err(rl_err)?;
        Ok(StepOutcome {
            observation: s.state.flatten(),
            reward: s.reward.reward,
            done: s.done,
        })
    }
}
