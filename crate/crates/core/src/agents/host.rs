//! Host side: per-host monitor and tuner, and a runtime that serves one
//! shared simulator to several RL agents over transports.

use log::{debug, warn};

use super::robust::RobustnessConfig;
use super::transport::Transport;
use super::wire::{Payload, StatsBody, WireMessage};
use super::{AgentError, ERR_BAD_PARAMS, ERR_PROTOCOL, ERR_ROUND_ABORTED, ERR_RUNTIME};
use crate::env::{advance_interval, windows_us, ActionGrid, EnvConfig, Episode, EpisodeSource, GroupCollector, IntervalStats};
use crate::netsim::{Simulator, TraceLog};

#[derive(Debug, Clone, PartialEq)]
pub struct HostAgentConfig {
    pub agent_id: u32,
    pub t1_ms: u64,
    pub t2_ms: u64,
    /// Flows with `id % groups == group` belong to this host.
    pub groups: usize,
    pub group: usize,
}

impl HostAgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.t1_ms == 0 || self.t1_ms >= self.t2_ms {
            return Err(AgentError::Config(format!("need 0 < T1 < T2, got {} / {} ms", self.t1_ms, self.t2_ms)));
        }
        if self.groups == 0 || self.group >= self.groups {
            return Err(AgentError::Config(format!("group {} of {}", self.group, self.groups)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HostAgent {
    cfg: HostAgentConfig,
    collector: GroupCollector,
    applied_at_us: Option<u64>,
}

impl HostAgent {
    pub fn new(cfg: HostAgentConfig, robustness: RobustnessConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        robustness.validate().map_err(AgentError::Config)?;
        let collector = GroupCollector::new(cfg.groups, cfg.group, robustness);
        Ok(Self {
            cfg,
            collector,
            applied_at_us: None,
        })
    }

    pub fn config(&self) -> &HostAgentConfig {
        &self.cfg
    }

    pub fn collector(&self) -> &GroupCollector {
        &self.collector
    }

    pub fn collector_mut(&mut self) -> &mut GroupCollector {
        &mut self.collector
    }

    pub fn applied_at_us(&self) -> Option<u64> {
        self.applied_at_us
    }

    /// Range check against the grid's bounds.
    pub fn check_windows(rt_s: f64, bw_rounds: u64, grid: &ActionGrid) -> Result<(), AgentError> {
        let rt_lo = grid.rt_options[0];
        let rt_hi = *grid.rt_options.last().expect("validated grid");
        let bw_lo = grid.bw_options[0];
        let bw_hi = *grid.bw_options.last().expect("validated grid");
        if !(rt_s >= rt_lo && rt_s <= rt_hi) || !(bw_lo..=bw_hi).contains(&bw_rounds) {
            return Err(AgentError::Config(format!(
                "windows ({rt_s} s, {bw_rounds}) outside [{rt_lo}, {rt_hi}] s x [{bw_lo}, {bw_hi}]"
            )));
        }
        Ok(())
    }

    /// Tuner: writes the windows to every flow of this host. Values outside
    /// the grid's range are refused and the previous windows stay.
    pub fn apply_windows(&mut self, sim: &mut Simulator, rt_s: f64, bw_rounds: u64, grid: &ActionGrid) -> Result<(), AgentError> {
        Self::check_windows(rt_s, bw_rounds, grid)?;
        let (rt_us, bw) = windows_us(rt_s, bw_rounds)?;
        sim.set_group_windows(self.cfg.groups, self.cfg.group, rt_us, bw)
            .map_err(crate::env::EnvError::from)?;
        self.applied_at_us = Some(sim.now().as_micros());
        debug!("host {} windows ({rt_s} s, {bw}) at {}", self.cfg.agent_id, sim.now());
        Ok(())
    }

    /// Drains the interval aggregates into a STATS body. `team` replaces the
    /// interval with a pooled one.
    pub fn report(&mut self, sim: &Simulator, done: bool, team: Option<IntervalStats>) -> StatsBody {
        let (own, pid) = self.collector.take_interval();
        let (rt_us, bw) = sim.group_windows(self.cfg.group);
        StatsBody {
            time_us: sim.now().as_micros(),
            done,
            rt_window_ms: (rt_us / 1_000) as u32,
            bw_window_rounds: bw as u32,
            observations: self.collector.monitor().observations(),
            interval: team.unwrap_or(own),
            pid,
        }
    }
}

/// Owns a simulator shared by one host per RL agent; each round waits for a
/// message from every agent, then answers all of them.
pub struct HostRuntime {
    env: EnvConfig,
    source: Box<dyn EpisodeSource>,
    hosts: Vec<HostAgent>,
    links: Vec<Box<dyn Transport>>,
    episode: Option<Episode>,
    team_reward: bool,
    keep_trace: bool,
    trace: TraceLog,
}

impl HostRuntime {
    /// One host per link; link `i` serves agent `i` and flow group `i`.
    pub fn new(env: EnvConfig, source: Box<dyn EpisodeSource>, links: Vec<Box<dyn Transport>>) -> Result<Self, AgentError> {
        env.validate()?;
        if links.is_empty() {
            return Err(AgentError::Config("runtime needs at least one link".into()));
        }
        let groups = links.len();
        let hosts = (0..groups)
            .map(|g| {
                HostAgent::new(
                    HostAgentConfig {
                        agent_id: g as u32,
                        t1_ms: env.t1_ms,
                        t2_ms: env.t2_ms,
                        groups,
                        group: g,
                    },
                    env.robustness.clone(),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            env,
            source,
            hosts,
            links,
            episode: None,
            team_reward: true,
            keep_trace: false,
            trace: TraceLog::default(),
        })
    }

    /// Reward each agent on its own flows instead of the pooled team stats.
    pub fn with_local_reward(mut self) -> Self {
        self.team_reward = false;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.keep_trace = true;
        self
    }

    /// Serves rounds until an agent hangs up; returns the collected trace.
    pub fn serve(mut self) -> Result<TraceLog, AgentError> {
        loop {
            let mut msgs = Vec::with_capacity(self.links.len());
            for link in self.links.iter_mut() {
                match link.recv() {
                    Ok(m) => msgs.push(m),
                    Err(AgentError::Disconnected) => return Ok(self.trace),
                    Err(e) => return Err(e),
                }
            }
            let (replies, fatal) = match self.handle_round(&msgs) {
                Ok(r) => (r, None),
                Err(e) => {
                    let text = e.to_string();
                    let r = msgs.iter().map(|m| error_reply(m, ERR_RUNTIME, &text)).collect();
                    (r, Some(e))
                }
            };
            for (link, reply) in self.links.iter_mut().zip(&replies) {
                match link.send(reply) {
                    Ok(()) | Err(AgentError::Disconnected) => {}
                    Err(e) => return Err(e),
                }
            }
            if let Some(e) = fatal {
                return Err(e);
            }
        }
    }

    pub fn handle_round(&mut self, msgs: &[WireMessage]) -> Result<Vec<WireMessage>, AgentError> {
        for (i, m) in msgs.iter().enumerate() {
            if m.agent_id != i as u32 {
                let text = format!("link {i} carried agent {}", m.agent_id);
                return Ok(msgs.iter().map(|m| error_reply(m, ERR_PROTOCOL, &text)).collect());
            }
        }
        if msgs.iter().all(|m| m.payload == Payload::Hello) {
            return self.reset(msgs);
        }
        if !msgs.iter().all(|m| matches!(m.payload, Payload::Params { .. })) {
            let text = "agents must all send HELLO or all send PARAMS";
            return Ok(msgs.iter().map(|m| error_reply(m, ERR_PROTOCOL, text)).collect());
        }
        let Some(ep) = self.episode.as_mut().filter(|ep| ep.sim.now() < ep.end) else {
            return Ok(msgs.iter().map(|m| error_reply(m, ERR_PROTOCOL, "no running episode")).collect());
        };
        let windows: Vec<(f64, u64)> = msgs
            .iter()
            .map(|m| match m.payload {
                Payload::Params {
                    rt_window_ms,
                    bw_window_rounds,
                } => (rt_window_ms as f64 / 1_000.0, bw_window_rounds as u64),
                _ => unreachable!("checked above"),
            })
            .collect();
        let bad: Vec<Option<String>> = windows
            .iter()
            .enumerate()
            .map(|(i, &(rt, bw))| {
                HostAgent::check_windows(rt, bw, &self.env.grid).err().map(|e| {
                    warn!("agent {i}: {e}");
                    e.to_string()
                })
            })
            .collect();
        if bad.iter().any(Option::is_some) {
            return Ok(msgs
                .iter()
                .zip(bad)
                .map(|(m, b)| match b {
                    Some(text) => error_reply(m, ERR_BAD_PARAMS, &text),
                    None => error_reply(m, ERR_ROUND_ABORTED, "another agent sent invalid parameters"),
                })
                .collect());
        }
        for (h, &(rt, bw)) in self.hosts.iter_mut().zip(&windows) {
            h.apply_windows(&mut ep.sim, rt, bw, &self.env.grid)?;
        }
        let trace = self.keep_trace.then_some(&mut self.trace);
        let mut collectors: Vec<&mut GroupCollector> = self.hosts.iter_mut().map(HostAgent::collector_mut).collect();
        let done = advance_interval(&mut ep.sim, &mut collectors, &self.env, ep.end, trace)?;
        let team = (self.team_reward && self.hosts.len() > 1).then(|| {
            let parts: Vec<IntervalStats> = self.hosts.iter().map(|h| h.collector().peek_interval()).collect();
            IntervalStats::pool(&parts)
        });
        Ok(msgs
            .iter()
            .zip(self.hosts.iter_mut())
            .map(|(m, h)| reply(m, Payload::Stats(h.report(&ep.sim, done, team))))
            .collect())
    }

    fn reset(&mut self, msgs: &[WireMessage]) -> Result<Vec<WireMessage>, AgentError> {
        let ep = self.source.next_episode()?;
        for h in self.hosts.iter_mut() {
            h.collector_mut().reset();
        }
        let replies = msgs
            .iter()
            .zip(self.hosts.iter_mut())
            .map(|(m, h)| reply(m, Payload::Stats(h.report(&ep.sim, false, None))))
            .collect();
        self.episode = Some(ep);
        Ok(replies)
    }

    pub fn sim(&self) -> Option<&Simulator> {
        self.episode.as_ref().map(|e| &e.sim)
    }
}

fn reply(to: &WireMessage, payload: Payload) -> WireMessage {
    WireMessage {
        agent_id: to.agent_id,
        epoch: to.epoch,
        payload,
    }
}

fn error_reply(to: &WireMessage, code: u16, message: &str) -> WireMessage {
    reply(
        to,
        Payload::Error {
            code,
            message: message.to_string(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvError, Episode};
    use crate::netsim::{EventKind, LinkSpec, NetworkEvent, SimConfig, SimTime};

    fn sim(seed: u64, flows: u32) -> Simulator {
        let link = LinkSpec::with_bdp_buffer(10_000_000, 40_000, 2.0);
        let mut sim = Simulator::new(SimConfig::new(seed, link).with_sampling(100_000)).unwrap();
        for f in 0..flows {
            sim.schedule(NetworkEvent::new(SimTime::ZERO, EventKind::FlowJoin { flow: f })).unwrap();
        }
        sim
    }

    fn host() -> HostAgent {
        HostAgent::new(
            HostAgentConfig {
                agent_id: 0,
                t1_ms: 100,
                t2_ms: 2_000,
                groups: 1,
                group: 0,
            },
            RobustnessConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn tuner_write_read() {
        let mut s = sim(1, 3);
        s.run_until(SimTime::from_secs(1)).unwrap();
        let mut h = host();
        let grid = ActionGrid::default();
        h.apply_windows(&mut s, 2.0, 16, &grid).unwrap();
        h.apply_windows(&mut s, 10.0, 8, &grid).unwrap();
        let body = h.report(&s, false, None);
        assert_eq!((body.rt_window_ms, body.bw_window_rounds), (10_000, 8));
        for f in s.active_flows() {
            assert_eq!(s.bbr(f).unwrap().windows(), (10.0, 8));
        }
        assert_eq!(h.applied_at_us(), Some(1_000_000));
    }

    #[test]
    fn tuner_rejects_out_of_range() {
        let mut s = sim(1, 1);
        s.run_until(SimTime::from_millis(1)).unwrap();
        let mut h = host();
        let grid = ActionGrid::default();
        h.apply_windows(&mut s, 2.0, 4, &grid).unwrap();
        assert!(h.apply_windows(&mut s, -1.0, 8, &grid).is_err());
        assert!(h.apply_windows(&mut s, 2.0, 64, &grid).is_err());
        assert_eq!(s.bbr(0).unwrap().windows(), (2.0, 4));
    }

    #[test]
    fn parameter_write_is_transparent() {
        let run = |write: bool| {
            let mut s = sim(5, 2);
            let mut trace = s.run_until(SimTime::from_secs(5)).unwrap();
            if write {
                host().apply_windows(&mut s, 10.0, 8, &ActionGrid::default()).unwrap();
            }
            trace.extend(s.run_until(SimTime::from_secs(12)).unwrap());
            let acct: Vec<_> = (0..2).map(|f| s.accounting(f).unwrap()).collect();
            (trace.to_csv_string(), acct)
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn changed_windows_only_touch_filters() {
        let run = |rt: f64| {
            let mut s = sim(5, 1);
            s.run_until(SimTime::from_secs(5)).unwrap();
            let before = s.accounting(0).unwrap();
            host().apply_windows(&mut s, rt, 8, &ActionGrid::default()).unwrap();
            let after = s.accounting(0).unwrap();
            (before, after, s.bbr_snapshot(0).unwrap().btlbw_bps)
        };
        let (b, a, bw) = run(0.5);
        assert_eq!(a, b);
        assert_eq!(bw, run(10.0).2);
    }

    #[test]
    fn runtime_rounds() {
        let src = || -> Result<Episode, EnvError> {
            Ok(Episode {
                sim: sim(2, 4),
                end: SimTime::from_secs(4),
            })
        };
        let (a, b) = (super::super::mem_pair(), super::super::mem_pair());
        let mut rt = HostRuntime::new(EnvConfig::default(), Box::new(src), vec![Box::new(a.0), Box::new(b.0)]).unwrap();
        let hello = |id| WireMessage {
            agent_id: id,
            epoch: 0,
            payload: Payload::Hello,
        };
        let params = |id, ms| WireMessage {
            agent_id: id,
            epoch: 1,
            payload: Payload::Params {
                rt_window_ms: ms,
                bw_window_rounds: 8,
            },
        };
        let r = rt.handle_round(&[hello(0), hello(1)]).unwrap();
        assert!(r.iter().all(|m| matches!(&m.payload, Payload::Stats(s) if s.observations.is_empty())));
        let r = rt.handle_round(&[params(0, 500), params(1, 99_000)]).unwrap();
        assert!(matches!(r[0].payload, Payload::Error { code: ERR_ROUND_ABORTED, .. }));
        assert!(matches!(r[1].payload, Payload::Error { code: ERR_BAD_PARAMS, .. }));
        assert_eq!(rt.sim().unwrap().now(), SimTime::ZERO);
        let r = rt.handle_round(&[params(0, 500), params(1, 5_000)]).unwrap();
        let Payload::Stats(s0) = &r[0].payload else { panic!() };
        let Payload::Stats(s1) = &r[1].payload else { panic!() };
        assert_eq!(s0.observations.iter().map(|o| o.flow_id).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(s1.observations.iter().map(|o| o.flow_id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!((s0.rt_window_ms, s1.rt_window_ms), (500, 5_000));
        assert_eq!(s0.interval, s1.interval);
        assert_eq!(r[1].epoch, 1);
        let sim = rt.sim().unwrap();
        assert_eq!(sim.bbr(2).unwrap().windows(), (0.5, 8));
        assert_eq!(sim.bbr(3).unwrap().windows(), (5.0, 8));
        let r = rt.handle_round(&[hello(0), params(1, 500)]).unwrap();
        assert!(r.iter().all(|m| matches!(m.payload, Payload::Error { code: ERR_PROTOCOL, .. })));
    }
}
