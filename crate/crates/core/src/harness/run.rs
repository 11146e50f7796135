//! Training and evaluation runs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::Manifest;
use super::metrics::ConvergenceSpec;
use super::report::MetricsReport;
use super::scenario::ScenarioSpec;
use super::HarnessError;
use crate::agents::coop::{agent_seed, spawn_runtimes};
use crate::agents::{CoopTrainer, TransportKind};
use crate::env::{write_records, CcEnv, EnvConfig, EnvStepRecord};
use crate::netsim::TraceLog;
use crate::rl::checkpoint::Checkpoint;
use crate::rl::{IterStats, Layout, Ppo, Trajectory};

/// Episode index used for evaluation; training streams never produce it.
pub const EVAL_EPISODE: u64 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub iterations: u64,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    /// One checkpoint per agent.
    pub checkpoints: Vec<Checkpoint>,
    /// `stats[iteration][agent]`.
    pub stats: Vec<Vec<IterStats>>,
}

#[derive(Debug, Serialize)]
struct TrainRow {
    iteration: u64,
    agent: usize,
    mean_reward: f64,
    clip_fraction: f64,
    entropy: f64,
    value_loss: f64,
    policy_loss: f64,
    penalty: f64,
    approx_kl: f64,
    samples: usize,
}

pub fn layout_for(env: &EnvConfig, hidden: &[usize]) -> Layout {
    let (k1, k2) = env.grid.dims();
    Layout::new(env.observation_dim(), hidden, k1, k2)
}

fn direct_path(spec: &ScenarioSpec) -> bool {
    spec.agents.agents == 1 && spec.agents.transport == TransportKind::Mem
}

/// Runs PPO on the scenario's workload. A single agent over the in-memory
/// transport drives `CcEnv` directly; anything else goes through the
/// host/agent message path.
pub fn train(spec: &ScenarioSpec, opts: &TrainOptions) -> Result<TrainOutput, HarnessError> {
    spec.validate()?;
    let env = spec.env_config();
    let hyper = spec.ppo.clone();
    let mut stats = Vec::with_capacity(opts.iterations as usize);
    let agents: Vec<Ppo> = if direct_path(spec) {
        let mut ppo = Ppo::new(layout_for(&env, &hyper.hidden), hyper.clone(), agent_seed(spec.seed, 0))?;
        let mut envs = (0..hyper.n_actors)
            .map(|a| CcEnv::new(env.clone(), spec.training_source(a)))
            .collect::<Result<Vec<_>, _>>()?;
        for _ in 0..opts.iterations {
            let s = ppo.iterate(&mut envs)?;
            log_progress(&s);
            stats.push(vec![s]);
        }
        vec![ppo]
    } else {
        let mut trainer = CoopTrainer::new(env, hyper, spec.agents.clone(), spec.seed, |a| spec.training_source(a))?;
        for _ in 0..opts.iterations {
            let s = trainer.iterate()?;
            log_progress(&s[0]);
            stats.push(s);
        }
        trainer.shutdown()?
    };
    let checkpoints: Vec<Checkpoint> = agents
        .iter()
        .map(|p| Checkpoint {
            params: p.params().clone(),
            hyper: p.hyper().clone(),
            seed: p.seed(),
            iteration: p.iteration(),
        })
        .collect();
    let out = TrainOutput { checkpoints, stats };
    if let Some(dir) = &opts.out {
        write_training(spec, opts.iterations, &out, dir)?;
    }
    Ok(out)
}

fn log_progress(s: &IterStats) {
    if s.iteration % 10 == 0 {
        log::info!(
            "iteration {} mean reward {:.4} entropy {:.3} clip {:.3}",
            s.iteration,
            s.mean_reward,
            s.entropy,
            s.clip_fraction
        );
    }
}

pub fn checkpoint_name(agent: usize) -> String {
    if agent == 0 {
        "checkpoint.bin".into()
    } else {
        format!("checkpoint_agent{agent}.bin")
    }
}

fn write_training(spec: &ScenarioSpec, iterations: u64, out: &TrainOutput, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new("train", spec, iterations);
    for (i, c) in out.checkpoints.iter().enumerate() {
        let bytes = c.to_bytes();
        std::fs::write(dir.join(checkpoint_name(i)), &bytes)?;
        manifest.record_output(&checkpoint_name(i), &bytes);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for per_agent in &out.stats {
        for (agent, s) in per_agent.iter().enumerate() {
            w.serialize(TrainRow {
                iteration: s.iteration,
                agent,
                mean_reward: s.mean_reward,
                clip_fraction: s.clip_fraction,
                entropy: s.entropy,
                value_loss: s.value_loss,
                policy_loss: s.policy_loss,
                penalty: s.penalty,
                approx_kl: s.approx_kl,
                samples: s.samples,
            })?;
        }
    }
    if out.stats.is_empty() {
        w.write_record([
            "iteration", "agent", "mean_reward", "clip_fraction", "entropy", "value_loss", "policy_loss", "penalty",
            "approx_kl", "samples",
        ])?;
    }
    let csv_bytes = w.into_inner().map_err(|e| HarnessError::Runtime(e.to_string()))?;
    std::fs::write(dir.join("train.csv"), &csv_bytes)?;
    manifest.record_output("train.csv", &csv_bytes);
    manifest.write(&dir.join("manifest.json"))
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// Windows never touched: stock BBR.
    Vanilla,
    /// The same grid action at every step.
    Fixed(usize, usize),
    /// Greedy actions of a trained network, or sampled actions with
    /// continued updates when the scenario enables online evaluation.
    Checkpoint(Box<Checkpoint>),
}

impl Policy {
    pub fn label(&self) -> String {
        match self {
            Policy::Vanilla => "vanilla".into(),
            Policy::Fixed(i, j) => format!("fixed_{i}_{j}"),
            Policy::Checkpoint(_) => "ppo".into(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let c = Checkpoint::load(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Ok(Policy::Checkpoint(Box::new(c)))
    }
}

enum Actor {
    Vanilla,
    Fixed((usize, usize)),
    Net(Ppo),
}

impl Actor {
    fn new(policy: &Policy, env: &EnvConfig) -> Result<Self, HarnessError> {
        Ok(match policy {
            Policy::Vanilla => Actor::Vanilla,
            Policy::Fixed(i, j) => {
                env.grid.decode(*i, *j)?;
                Actor::Fixed((*i, *j))
            }
            Policy::Checkpoint(c) => {
                let want = layout_for(env, &c.params.layout().hidden);
                if *c.params.layout() != want {
                    return Err(HarnessError::Config(format!(
                        "checkpoint shape {:?} does not fit the scenario (expected {:?})",
                        c.params.layout(),
                        want
                    )));
                }
                Actor::Net(Ppo::from_params(c.params.clone(), c.hyper.clone(), c.seed)?)
            }
        })
    }

    fn act(&self, state: &[f64]) -> Result<Option<(usize, usize)>, HarnessError> {
        Ok(match self {
            Actor::Vanilla => None,
            Actor::Fixed(a) => Some(*a),
            Actor::Net(p) => Some(p.greedy(state)?),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub trace: TraceLog,
    pub records: Vec<EnvStepRecord>,
    pub report: MetricsReport,
}

/// Runs the scenario once under a policy. With more than one agent
/// every host group is driven by the same policy over the message path.
pub fn eval(spec: &ScenarioSpec, policy: &Policy, out: Option<&Path>) -> Result<EvalOutput, HarnessError> {
    spec.validate()?;
    let env = spec.env_config();
    let mut actor = Actor::new(policy, &env)?;
    let sample_us = spec.metrics.sample_interval_ms * 1_000;
    let (trace, records) = if spec.agents.agents == 1 {
        eval_local(spec, &env, &mut actor, sample_us)?
    } else {
        eval_remote(spec, &env, &actor, sample_us)?
    };
    let m = &spec.metrics;
    let report = MetricsReport::from_run(
        &spec.name,
        &spec.config_hash(),
        spec.seed,
        &policy.label(),
        &trace,
        &records,
        &spec.membership_events(EVAL_EPISODE),
        m.accuracy_threshold_ms,
        &ConvergenceSpec {
            tolerance: m.convergence_tolerance,
            hold_s: m.convergence_hold_s,
            smoothing_s: m.smoothing_s,
        },
    )?;
    let result = EvalOutput { trace, records, report };
    if let Some(dir) = out {
        write_eval(spec, policy, &result, dir)?;
    }
    Ok(result)
}

fn eval_local(
    spec: &ScenarioSpec,
    env: &EnvConfig,
    actor: &mut Actor,
    sample_us: u64,
) -> Result<(TraceLog, Vec<EnvStepRecord>), HarnessError> {
    let s = spec.clone();
    let source = move || s.realize(EVAL_EPISODE, Some(sample_us));
    let mut cc = CcEnv::new(env.clone(), Box::new(source))?.with_trace().with_records();
    let mut state = cc.reset_env()?.flatten();
    match actor {
        Actor::Net(ppo) if spec.train.online_eval => {
            ppo.set_learning_rate(spec.train.online_learning_rate);
            online_episode(&mut cc, ppo, state)?;
        }
        _ => loop {
            let step = cc.step_env(actor.act(&state)?)?;
            state = step.state.flatten();
            if step.done {
                break;
            }
        },
    }
    let records = cc.records().to_vec();
    Ok((cc.take_trace(), records))
}

/// Samples actions and runs a PPO update after every `horizon` steps and at
/// the end of the episode.
fn online_episode(cc: &mut CcEnv, ppo: &mut Ppo, mut state: Vec<f64>) -> Result<(), HarnessError> {
    let mut traj = Trajectory::default();
    loop {
        let (a, v) = ppo.act(&state)?;
        let step = cc.step_env(Some((a.i_rt, a.i_bw)))?;
        traj.states.push(std::mem::replace(&mut state, step.state.flatten()));
        traj.actions.push((a.i_rt, a.i_bw));
        traj.rewards.push(step.reward);
        traj.values.push(v);
        traj.log_probs.push(a.log_prob);
        traj.entropies.push(a.entropy);
        traj.dones.push(step.done);
        if step.done || traj.len() == ppo.hyper().horizon {
            traj.bootstrap_value = if step.done { 0.0 } else { ppo.params().forward(&state)?.value };
            let trajs = [std::mem::take(&mut traj)];
            let samples = ppo.samples(&trajs)?;
            let mut stats = ppo.update(&samples, None)?;
            ppo.finish_iteration(&trajs, &mut stats);
            log::debug!("online update {} mean reward {:.4}", stats.iteration, stats.mean_reward);
        }
        if step.done {
            return Ok(());
        }
    }
}

fn eval_remote(
    spec: &ScenarioSpec,
    env: &EnvConfig,
    actor: &Actor,
    sample_us: u64,
) -> Result<(TraceLog, Vec<EnvStepRecord>), HarnessError> {
    let s = spec.clone();
    let source: Box<dyn crate::env::EpisodeSource> = Box::new(move || s.realize(EVAL_EPISODE, Some(sample_us)));
    let (envs, mut servers) = spawn_runtimes(env, &spec.agents, vec![source], true)?;
    let mut remotes: Vec<_> = envs.into_iter().map(|mut v| v.remove(0)).collect();
    let default = env
        .grid
        .default_index()
        .ok_or_else(|| HarnessError::Config("vanilla over the message path needs (10 s, 8) on the grid".into()))?;
    let mut records = Vec::new();
    let result = (|| -> Result<(), HarnessError> {
        for r in remotes.iter_mut() {
            r.send_hello()?;
        }
        let mut states: Vec<Vec<f64>> = remotes
            .iter_mut()
            .map(|r| r.recv().map(|s| s.state.flatten()))
            .collect::<Result<_, _>>()?;
        let mut step = 0u64;
        loop {
            let mut actions = Vec::with_capacity(remotes.len());
            for (r, st) in remotes.iter_mut().zip(&states) {
                let a = actor.act(st)?;
                r.send_action(a.unwrap_or(default))?;
                actions.push(a);
            }
            step += 1;
            let mut done = false;
            for (k, r) in remotes.iter_mut().enumerate() {
                let s = r.recv()?;
                states[k] = s.state.flatten();
                done |= s.done;
                records.push(EnvStepRecord {
                    episode: 0,
                    step,
                    time_s: s.stats.time_us as f64 / 1e6,
                    action: actions[k],
                    w_rt_s: s.stats.rt_window_ms as f64 / 1e3,
                    w_bw_rounds: s.stats.bw_window_rounds as u64,
                    reward: s.reward.reward,
                    no_data: s.reward.no_data,
                    ticks: s.stats.interval.ticks,
                    mean_throughput_bps: s.stats.interval.mean_throughput_bps(),
                    mean_abs_error_ms: s.stats.interval.mean_abs_error_ms(),
                    done: s.done,
                    state: states[k].clone(),
                });
            }
            if done {
                return Ok(());
            }
        }
    })();
    drop(remotes);
    let trace = servers
        .remove(0)
        .join()
        .map_err(|_| HarnessError::Runtime("host runtime panicked".into()))??;
    result?;
    Ok((trace, records))
}

fn write_eval(spec: &ScenarioSpec, policy: &Policy, out: &EvalOutput, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new("eval", spec, 0);
    manifest.policy = Some(match policy {
        Policy::Checkpoint(c) => format!("ppo:{}", super::manifest::sha256_hex(&c.to_bytes())),
        other => other.label(),
    });
    let trace = out.trace.to_csv_string();
    std::fs::write(dir.join("trace.csv"), &trace)?;
    manifest.record_output("trace.csv", trace.as_bytes());
    let mut steps = Vec::new();
    write_records(&out.records, &mut steps)?;
    std::fs::write(dir.join("steps.csv"), &steps)?;
    manifest.record_output("steps.csv", &steps);
    let report = out.report.to_csv_string();
    std::fs::write(dir.join("report.csv"), &report)?;
    manifest.record_output("report.csv", report.as_bytes());
    manifest.write(&dir.join("manifest.json"))
}
