//! Gym-style environment around the simulator: one step is one T2 tuning
//! interval, sampled by the monitor every T1.

mod action;
mod reward;
mod state;

pub use action::ActionGrid;
pub use reward::{compute_reward, pid_terms, shaped_reward, IntervalStats, PidSample, PidTerms, RewardConfig, RewardOutcome};
pub use state::{
    build_state, FeatureRow, FlowObservation, StateScales, StateTable, FEATURES, F_BTLBW, F_CWND, F_CWND_GAIN,
    F_DELIVERY_RATE, F_LOSS, F_PACING, F_PACING_GAIN, F_RTPROP, F_SRTT,
};

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::robust::{Monitor, RobustnessConfig};
use crate::bbr::seconds_to_us;
use crate::netsim::{FlowId, SimError, SimTime, Simulator, TraceLog};
use crate::rl::{Environment, RlError, StepOutcome};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {index:?} outside grid {dims:?}")]
    ActionOutOfRange { index: (usize, usize), dims: (usize, usize) },
    #[error("latency is zero")]
    ZeroLatency,
    #[error("episode has terminated")]
    Terminated,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub t1_ms: u64,
    pub t2_ms: u64,
    pub f_max: usize,
    pub grid: ActionGrid,
    pub reward: RewardConfig,
    pub scales: StateScales,
    pub robustness: RobustnessConfig,
    /// Seed of the flow subsampling used when more than `f_max` flows exist.
    pub state_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            t1_ms: 100,
            t2_ms: 2_000,
            f_max: 8,
            grid: ActionGrid::default(),
            reward: RewardConfig::default(),
            scales: StateScales::default(),
            robustness: RobustnessConfig::default(),
            state_seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let fail = |m: String| Err(EnvError::Config(m));
        if self.t1_ms == 0 || self.t1_ms >= self.t2_ms {
            return fail(format!("need 0 < T1 < T2, got {} ms / {} ms", self.t1_ms, self.t2_ms));
        }
        if self.f_max == 0 {
            return fail("f_max must be positive".into());
        }
        self.grid.validate().map_err(EnvError::Config)?;
        self.reward.validate().map_err(EnvError::Config)?;
        self.scales.validate().map_err(EnvError::Config)?;
        self.robustness.validate().map_err(EnvError::Config)?;
        Ok(())
    }

    pub fn t1_us(&self) -> u64 {
        self.t1_ms * 1_000
    }

    pub fn t2_us(&self) -> u64 {
        self.t2_ms * 1_000
    }

    pub fn observation_dim(&self) -> usize {
        self.f_max * FEATURES
    }
}

/// A simulator loaded with a scenario, run until `end`.
pub struct Episode {
    pub sim: Simulator,
    pub end: SimTime,
}

pub trait EpisodeSource: Send {
    fn next_episode(&mut self) -> Result<Episode, EnvError>;
}

impl<F> EpisodeSource for F
where
    F: FnMut() -> Result<Episode, EnvError> + Send,
{
    fn next_episode(&mut self) -> Result<Episode, EnvError> {
        self()
    }
}

/// Monitor state of one flow group (flows with `id % groups == group`).
#[derive(Debug, Clone)]
pub struct GroupCollector {
    groups: usize,
    group: usize,
    monitor: Monitor,
    stats: IntervalStats,
    pid: Vec<PidSample>,
}

impl GroupCollector {
    pub fn new(groups: usize, group: usize, robustness: RobustnessConfig) -> Self {
        Self {
            groups: groups.max(1),
            group,
            monitor: Monitor::new(robustness),
            stats: IntervalStats::default(),
            pid: Vec::new(),
        }
    }

    pub fn group(&self) -> (usize, usize) {
        (self.groups, self.group)
    }

    pub fn members(&self, sim: &Simulator) -> Vec<FlowId> {
        sim.active_flows()
            .into_iter()
            .filter(|f| *f as usize % self.groups == self.group)
            .collect()
    }

    pub fn monitor(&self) -> &Monitor {
        &self.monitor
    }

    pub fn reset(&mut self) {
        self.monitor.reset();
        self.stats = IntervalStats::default();
        self.pid.clear();
    }

    /// Raw per-flow samples of this group over the trailing `window_us`.
    pub fn sample(&self, sim: &Simulator, window_us: u64) -> Result<Vec<FlowObservation>, EnvError> {
        self.members(sim)
            .into_iter()
            .map(|f| Ok(FlowObservation::new(&sim.sample_flow_stats(f, window_us)?, &sim.bbr_snapshot(f)?)))
            .collect()
    }

    /// One T1 monitor sample.
    pub fn tick(&mut self, sim: &Simulator, t1_us: u64) -> Result<(), EnvError> {
        let raw = self.sample(sim, t1_us)?;
        let members: Vec<FlowId> = raw.iter().map(|o| o.flow_id).collect();
        self.monitor.tick(&raw, &members, sim.link().capacity_bps as f64);
        let truth_us = sim.true_rtprop_us() as f64;
        self.stats.ticks += 1;
        let mut thr = 0.0;
        let mut rtt_sum = 0.0;
        let mut rtt_n = 0usize;
        let mut est_sum = 0.0;
        for o in &raw {
            thr += o.raw[F_DELIVERY_RATE];
            if o.raw[F_SRTT] > 0.0 {
                rtt_sum += o.raw[F_SRTT];
                rtt_n += 1;
            }
            if o.raw[F_RTPROP] > 0.0 {
                self.stats.error_sum_ms += (o.raw[F_RTPROP] - truth_us).abs() / 1_000.0;
                self.stats.error_count += 1;
                est_sum += o.raw[F_RTPROP];
            }
        }
        self.stats.throughput_sum_bps += thr;
        if rtt_n > 0 {
            let est = if est_sum > 0.0 {
                est_sum / self.stats.error_count.max(1) as f64
            } else {
                truth_us
            };
            self.pid.push(PidSample {
                throughput_bps: thr,
                rtt_s: rtt_sum / rtt_n as f64 / 1e6,
                latency_s: truth_us / 1e6,
                latency_estimate_s: est / 1e6,
            });
        }
        Ok(())
    }

    pub fn peek_interval(&self) -> IntervalStats {
        self.stats
    }

    /// Returns and clears the interval aggregates.
    pub fn take_interval(&mut self) -> (IntervalStats, Vec<PidSample>) {
        (std::mem::take(&mut self.stats), std::mem::take(&mut self.pid))
    }

    pub fn observe(&self, cfg: &EnvConfig, step: u64) -> StateTable {
        build_state(&self.monitor.observations(), cfg.f_max, &cfg.scales, cfg.state_seed, step)
    }
}

/// Advances `sim` by one T2 interval, ticking every collector each T1.
/// Stops early at `end`; returns true once the episode is over.
pub fn advance_interval(
    sim: &mut Simulator,
    collectors: &mut [&mut GroupCollector],
    cfg: &EnvConfig,
    end: SimTime,
    trace: Option<&mut TraceLog>,
) -> Result<bool, EnvError> {
    let t1 = cfg.t1_us();
    let ticks = cfg.t2_us() / t1;
    let mut sink = trace;
    for _ in 0..ticks {
        let next = sim.now().plus_us(t1);
        if next > end {
            let log = sim.run_until(end)?;
            if let Some(t) = sink.as_deref_mut() {
                t.extend(log);
            }
            return Ok(true);
        }
        let log = sim.run_until(next)?;
        if let Some(t) = sink.as_deref_mut() {
            t.extend(log);
        }
        for c in collectors.iter_mut() {
            c.tick(sim, t1)?;
        }
    }
    Ok(sim.now() >= end)
}

/// Converts grid windows to the simulator's units.
pub fn windows_us(rt_s: f64, bw_rounds: u64) -> Result<(u64, u64), EnvError> {
    let rt = seconds_to_us(rt_s).ok_or_else(|| EnvError::Config(format!("bad rt window {rt_s}")))?;
    Ok((rt, bw_rounds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvStepRecord {
    pub episode: u64,
    pub step: u64,
    pub time_s: f64,
    /// `None` when the windows were left untouched.
    pub action: Option<(usize, usize)>,
    pub w_rt_s: f64,
    pub w_bw_rounds: u64,
    pub reward: f64,
    pub no_data: bool,
    pub ticks: u32,
    pub mean_throughput_bps: f64,
    pub mean_abs_error_ms: Option<f64>,
    pub done: bool,
    pub state: Vec<f64>,
}

#[derive(Serialize)]
struct RecordRow<'a> {
    episode: u64,
    step: u64,
    time_s: f64,
    i_rt: Option<usize>,
    i_bw: Option<usize>,
    w_rt_s: f64,
    w_bw_rounds: u64,
    reward: f64,
    no_data: bool,
    ticks: u32,
    mean_throughput_bps: f64,
    mean_abs_error_ms: Option<f64>,
    done: bool,
    state: &'a str,
}

pub fn write_records<W: Write>(records: &[EnvStepRecord], out: W) -> Result<(), EnvError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        let state = r.state.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";");
        w.serialize(RecordRow {
            episode: r.episode,
            step: r.step,
            time_s: r.time_s,
            i_rt: r.action.map(|a| a.0),
            i_bw: r.action.map(|a| a.1),
            w_rt_s: r.w_rt_s,
            w_bw_rounds: r.w_bw_rounds,
            reward: r.reward,
            no_data: r.no_data,
            ticks: r.ticks,
            mean_throughput_bps: r.mean_throughput_bps,
            mean_abs_error_ms: r.mean_abs_error_ms,
            done: r.done,
            state: &state,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub state: StateTable,
    pub reward: f64,
    pub done: bool,
    pub record: EnvStepRecord,
}

/// Single-agent environment controlling every flow of the simulator.
pub struct CcEnv {
    cfg: EnvConfig,
    source: Box<dyn EpisodeSource>,
    current: Option<Episode>,
    collector: GroupCollector,
    episode: u64,
    step: u64,
    keep_trace: bool,
    trace: TraceLog,
    keep_records: bool,
    records: Vec<EnvStepRecord>,
}

impl CcEnv {
    pub fn new(cfg: EnvConfig, source: Box<dyn EpisodeSource>) -> Result<Self, EnvError> {
        cfg.validate()?;
        let collector = GroupCollector::new(1, 0, cfg.robustness.clone());
        Ok(Self {
            cfg,
            source,
            current: None,
            collector,
            episode: 0,
            step: 0,
            keep_trace: false,
            trace: TraceLog::default(),
            keep_records: false,
            records: Vec::new(),
        })
    }

    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    pub fn with_records(mut self) -> Self {
        self.keep_records = true;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn sim(&self) -> Option<&Simulator> {
        self.current.as_ref().map(|e| &e.sim)
    }

    pub fn trace(&self) -> &TraceLog {
        &self.trace
    }

    pub fn take_trace(&mut self) -> TraceLog {
        std::mem::take(&mut self.trace)
    }

    pub fn records(&self) -> &[EnvStepRecord] {
        &self.records
    }

    /// Loads the next scenario and returns its initial (empty) state.
    pub fn reset_env(&mut self) -> Result<StateTable, EnvError> {
        let ep = self.source.next_episode()?;
        if self.current.is_some() {
            self.episode += 1;
        }
        self.current = Some(ep);
        self.step = 0;
        self.collector.reset();
        Ok(self.collector.observe(&self.cfg, 0))
    }

    /// Runs one tuning interval. `None` leaves the windows as they are.
    pub fn step_env(&mut self, action: Option<(usize, usize)>) -> Result<EnvStep, EnvError> {
        let cfg = &self.cfg;
        let ep = self.current.as_mut().ok_or(EnvError::Terminated)?;
        if ep.sim.now() >= ep.end {
            return Err(EnvError::Terminated);
        }
        if let Some((i, j)) = action {
            let (rt, bw) = cfg.grid.decode(i, j)?;
            let (rt_us, bw) = windows_us(rt, bw)?;
            ep.sim.set_group_windows(1, 0, rt_us, bw)?;
        }
        let trace = self.keep_trace.then_some(&mut self.trace);
        let done = advance_interval(&mut ep.sim, &mut [&mut self.collector], cfg, ep.end, trace)?;
        let (stats, pid) = self.collector.take_interval();
        let outcome = shaped_reward(
            &stats,
            &pid,
            cfg.t1_us() as f64 / 1e6,
            cfg.robustness.moving_window,
            &cfg.reward,
        )?;
        self.step += 1;
        let state = self.collector.observe(cfg, self.step);
        let (w_rt, w_bw) = ep.sim.group_windows(0);
        let record = EnvStepRecord {
            episode: self.episode,
            step: self.step,
            time_s: ep.sim.now().as_secs_f64(),
            action,
            w_rt_s: w_rt as f64 / 1e6,
            w_bw_rounds: w_bw,
            reward: outcome.reward,
            no_data: outcome.no_data,
            ticks: stats.ticks,
            mean_throughput_bps: stats.mean_throughput_bps(),
            mean_abs_error_ms: stats.mean_abs_error_ms(),
            done,
            state: state.flatten(),
        };
        if self.keep_records {
            self.records.push(record.clone());
        }
        Ok(EnvStep {
            state,
            reward: outcome.reward,
            done,
            record,
        })
    }
}

fn rl_err(e: EnvError) -> RlError {
    RlError::Env(e.to_string())
}

impl Environment for CcEnv {
    fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    fn action_dims(&self) -> (usize, usize) {
        self.cfg.grid.dims()
    }

    fn reset(&mut self) -> Result<Vec<f64>, RlError> {
        self.reset_env().map(|s| s.flatten()).map_err(rl_err)
    }

    fn step(&mut self, action: (usize, usize)) -> Result<StepOutcome, RlError> {
        let s = self.step_env(Some(action)).map_err(rl_err)?;
        Ok(StepOutcome {
            observation: s.state.flatten(),
            reward: s.reward,
            done: s.done,
        })
    }
}
