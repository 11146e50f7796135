use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{clip_grad_norm, Adam};
use super::dist::{log_softmax, sample_action, ActionSample};
use super::gae::compute_gae;
use super::loss::{loss_value, total_loss, Samples, ValuePenalty};
use super::net::{Layout, PolicyParams};
use super::{Environment, PpoHyper, RlError};

/// One actor's rollout of `horizon` steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<(usize, usize)>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub entropies: Vec<f64>,
    pub dones: Vec<bool>,
    /// V(s_T), or zero when the last step ended an episode.
    pub bootstrap_value: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn to_samples(&self, gamma: f64, lambda: f64) -> Result<Samples, RlError> {
        let mut values = self.values.clone();
        values.push(self.bootstrap_value);
        let est = compute_gae(&self.rewards, &values, &self.dones, gamma, lambda)?;
        Ok(Samples {
            states: self.states.clone(),
            actions: self.actions.clone(),
            old_log_probs: self.log_probs.clone(),
            advantages: est.advantages,
            value_targets: est.targets,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterStats {
    pub iteration: u64,
    pub mean_reward: f64,
    /// Mean of the per-epoch clip fractions.
    pub clip_fraction: f64,
    /// Share of samples with |R - 1| > eps, measured over the whole batch at
    /// the start of each epoch.
    pub epoch_clip_fractions: Vec<f64>,
    pub entropy: f64,
    pub value_loss: f64,
    pub policy_loss: f64,
    pub penalty: f64,
    pub approx_kl: f64,
    pub samples: usize,
}

pub struct Ppo {
    params: PolicyParams,
    hyper: PpoHyper,
    adam: Adam,
    rng: ChaCha8Rng,
    seed: u64,
    observations: Vec<Option<Vec<f64>>>,
    iteration: u64,
}

impl Ppo {
    pub fn new(layout: Layout, hyper: PpoHyper, seed: u64) -> Result<Self, RlError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::init(layout, &mut rng)?;
        let adam = Adam::new(params.len(), hyper.learning_rate);
        Ok(Self {
            params,
            hyper,
            adam,
            rng,
            seed,
            observations: Vec::new(),
            iteration: 0,
        })
    }

    /// Resumes from stored parameters with fresh optimizer state.
    pub fn from_params(params: PolicyParams, hyper: PpoHyper, seed: u64) -> Result<Self, RlError> {
        hyper.validate()?;
        let adam = Adam::new(params.len(), hyper.learning_rate);
        Ok(Self {
            params,
            hyper,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            observations: Vec::new(),
            iteration: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn hyper(&self) -> &PpoHyper {
        &self.hyper
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.hyper.learning_rate = lr;
        self.adam.lr = lr;
    }

    /// Samples an action and returns it with V(s).
    pub fn act(&mut self, state: &[f64]) -> Result<(ActionSample, f64), RlError> {
        let f = self.params.forward(state)?;
        Ok((sample_action(&f.logits_rt, &f.logits_bw, &mut self.rng), f.value))
    }

    /// Most likely action; ties go to the lower index.
    pub fn greedy(&self, state: &[f64]) -> Result<(usize, usize), RlError> {
        let f = self.params.forward(state)?;
        Ok((argmax(&f.logits_rt), argmax(&f.logits_bw)))
    }

    pub fn log_prob(&self, state: &[f64], action: (usize, usize)) -> Result<f64, RlError> {
        let f = self.params.forward(state)?;
        Ok(log_softmax(&f.logits_rt)[action.0] + log_softmax(&f.logits_bw)[action.1])
    }

    /// Runs the current policy for `horizon` steps in each environment, in
    /// environment order. Episodes that end are reset and continued.
    pub fn collect<E: Environment>(&mut self, envs: &mut [E]) -> Result<Vec<Trajectory>, RlError> {
        if envs.is_empty() {
            return Err(RlError::InvalidHyper("at least one environment is required".into()));
        }
        self.observations.resize(envs.len(), None);
        let mut out = Vec::with_capacity(envs.len());
        for (e, env) in envs.iter_mut().enumerate() {
            let mut traj = Trajectory::default();
            let mut obs = match self.observations[e].take() {
                Some(o) => o,
                None => env.reset()?,
            };
            for _ in 0..self.hyper.horizon {
                let (a, v) = self.act(&obs)?;
                let step = env.step((a.i_rt, a.i_bw))?;
                if !step.reward.is_finite() {
                    return Err(RlError::NonFinite("reward"));
                }
                traj.states.push(std::mem::take(&mut obs));
                traj.actions.push((a.i_rt, a.i_bw));
                traj.rewards.push(step.reward);
                traj.values.push(v);
                traj.log_probs.push(a.log_prob);
                traj.entropies.push(a.entropy);
                traj.dones.push(step.done);
                obs = if step.done { env.reset()? } else { step.observation };
            }
            traj.bootstrap_value = if traj.dones.last() == Some(&true) {
                0.0
            } else {
                self.params.forward(&obs)?.value
            };
            self.observations[e] = Some(obs);
            out.push(traj);
        }
        Ok(out)
    }

    pub fn samples(&self, trajs: &[Trajectory]) -> Result<Samples, RlError> {
        let mut all = Samples::default();
        for t in trajs {
            all.append(&t.to_samples(self.hyper.gamma, self.hyper.lambda)?);
        }
        Ok(all)
    }

    /// `epochs` passes of shuffled minibatch descent on the PPO loss.
    pub fn update(&mut self, samples: &Samples, penalty: Option<&ValuePenalty>) -> Result<IterStats, RlError> {
        if samples.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        let n = samples.len();
        let all: Vec<usize> = (0..n).collect();
        let mut order = all.clone();
        let mut stats = IterStats {
            samples: n,
            ..Default::default()
        };
        let mut weighted = 0.0;
        for _ in 0..self.hyper.epochs {
            let start = loss_value(&self.params, samples, &all, &self.hyper, None)?;
            stats.epoch_clip_fractions.push(start.clip_fraction);
            order.shuffle(&mut self.rng);
            for mb in order.chunks(self.hyper.minibatch_size) {
                let (b, mut g) = total_loss(&self.params, samples, mb, &self.hyper, penalty)?;
                clip_grad_norm(&mut g, self.hyper.max_grad_norm);
                self.adam.step(self.params.as_mut_slice(), &g);
                let w = mb.len() as f64;
                weighted += w;
                stats.value_loss += w * b.value_loss;
                stats.policy_loss += w * b.surrogate;
                stats.penalty += w * b.penalty;
                stats.approx_kl += w * b.approx_kl;
            }
        }
        if self.params.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(RlError::NonFinite("parameters after update"));
        }
        stats.value_loss /= weighted;
        stats.policy_loss /= weighted;
        stats.penalty /= weighted;
        stats.approx_kl /= weighted;
        stats.clip_fraction =
            stats.epoch_clip_fractions.iter().sum::<f64>() / stats.epoch_clip_fractions.len() as f64;
        Ok(stats)
    }

    /// Collect, estimate advantages, update.
    pub fn iterate<E: Environment>(&mut self, envs: &mut [E]) -> Result<IterStats, RlError> {
        let trajs = self.collect(envs)?;
        let samples = self.samples(&trajs)?;
        let mut stats = self.update(&samples, None)?;
        self.finish_iteration(&trajs, &mut stats);
        Ok(stats)
    }

    /// Fills rollout statistics and advances the iteration counter.
    pub fn finish_iteration(&mut self, trajs: &[Trajectory], stats: &mut IterStats) {
        let steps: usize = trajs.iter().map(Trajectory::len).sum();
        stats.mean_reward = trajs.iter().flat_map(|t| &t.rewards).sum::<f64>() / steps as f64;
        stats.entropy = trajs.iter().flat_map(|t| &t.entropies).sum::<f64>() / steps as f64;
        self.iteration += 1;
        stats.iteration = self.iteration;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::bandit::TwoArmedBandit;

    fn bandit_hyper() -> PpoHyper {
        PpoHyper {
            horizon: 32,
            minibatch_size: 32,
            ..Default::default()
        }
    }

    #[test]
    fn bandit_learns_the_better_arm() {
        let mut ppo = Ppo::new(TwoArmedBandit::layout(&[16]), bandit_hyper(), 3).unwrap();
        let mut envs = vec![TwoArmedBandit::default(); 4];
        let mut last = 0.0;
        for _ in 0..60 {
            last = ppo.iterate(&mut envs).unwrap().mean_reward;
        }
        assert!(last >= 0.9, "mean reward {last}");
        assert_eq!(ppo.greedy(&[1.0]).unwrap().0, 0);
    }

    #[test]
    fn first_epoch_never_clips() {
        let mut ppo = Ppo::new(TwoArmedBandit::layout(&[8]), bandit_hyper(), 1).unwrap();
        let mut envs = vec![TwoArmedBandit::default(); 2];
        let s = ppo.iterate(&mut envs).unwrap();
        assert_eq!(s.epoch_clip_fractions[0], 0.0);
        assert!(s.epoch_clip_fractions.iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(s.samples, 64);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let run = || {
            let mut ppo = Ppo::new(TwoArmedBandit::layout(&[8]), bandit_hyper(), 11).unwrap();
            let mut envs = vec![TwoArmedBandit::default(); 2];
            for _ in 0..10 {
                ppo.iterate(&mut envs).unwrap();
            }
            ppo.params().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn truncated_rollout_bootstraps_from_value() {
        let mut ppo = Ppo::new(TwoArmedBandit::layout(&[4]), bandit_hyper(), 2).unwrap();
        let mut envs = vec![TwoArmedBandit::default()];
        let t = ppo.collect(&mut envs).unwrap();
        // every bandit step ends its episode
        assert_eq!(t[0].bootstrap_value, 0.0);
        assert_eq!(t[0].len(), 32);
        assert!(t[0].log_probs.iter().all(|&lp| lp <= 0.0));
    }
}
