//! TOML scenario files.
//!
//! ```toml
//! name = "fig2a"
//! seed = 1
//! duration_s = 40.0
//!
//! [link]
//! capacity_mbps = 20.0
//! rtt_ms = 40.0
//! buffer_bdp = 2.0
//!
//! [[flows]]
//! start_s = 0.0
//!
//! [[events]]
//! type = "set_latency"
//! at_s = 11.0
//! rtt_ms = 400.0
//! ```
//!
//! A `[random]` table replaces the fixed link and event list with draws from
//! uniform ranges, seeded by `seed` and the episode index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::agents::CoopConfig;
use crate::env::{EnvConfig, Episode, EpisodeSource, EnvError};
use crate::netsim::{EventKind, LinkSpec, NetworkEvent, SimConfig, SimTime, Simulator};
use crate::rl::PpoHyper;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkToml {
    pub capacity_mbps: f64,
    pub rtt_ms: f64,
    #[serde(default = "default_buffer_bdp")]
    pub buffer_bdp: f64,
}

fn default_buffer_bdp() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum EventSpec {
    SetBandwidth { at_s: f64, mbps: f64 },
    SetLatency { at_s: f64, rtt_ms: f64 },
    FlowJoin { at_s: f64, flow: u32 },
    FlowLeave { at_s: f64, flow: u32 },
}

impl EventSpec {
    pub fn at_s(&self) -> f64 {
        match *self {
            EventSpec::SetBandwidth { at_s, .. }
            | EventSpec::SetLatency { at_s, .. }
            | EventSpec::FlowJoin { at_s, .. }
            | EventSpec::FlowLeave { at_s, .. } => at_s,
        }
    }

    fn to_event(self) -> NetworkEvent {
        let at = SimTime::from_secs_f64(self.at_s());
        let kind = match self {
            EventSpec::SetBandwidth { mbps, .. } => EventKind::SetBandwidth { bps: mbps_to_bps(mbps) },
            EventSpec::SetLatency { rtt_ms, .. } => EventKind::SetLatency { rtt_us: ms_to_us(rtt_ms) },
            EventSpec::FlowJoin { flow, .. } => EventKind::FlowJoin { flow },
            EventSpec::FlowLeave { flow, .. } => EventKind::FlowLeave { flow },
        };
        NetworkEvent::new(at, kind)
    }
}

/// Flow `i` of the list gets id `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub stop_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSpec {
    pub bandwidth_mbps: [f64; 2],
    pub rtt_ms: [f64; 2],
    /// Time between successive link changes.
    pub interval_s: [f64; 2],
    /// Flows started at time zero when no `[[flows]]` are given.
    pub flows: u32,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            bandwidth_mbps: [1.0, 10.0],
            rtt_ms: [10.0, 50.0],
            interval_s: [1.0, 50.0],
            flows: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub iterations: u64,
    /// Use the largest capacity the scenario can reach as the reward's
    /// throughput normalizer.
    pub auto_normalizer: bool,
    /// Keep updating a checkpoint's policy during evaluation, sampling
    /// actions instead of acting greedily.
    pub online_eval: bool,
    pub online_learning_rate: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            iterations: 500,
            auto_normalizer: true,
            online_eval: false,
            online_learning_rate: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    pub sample_interval_ms: u64,
    pub accuracy_threshold_ms: f64,
    pub convergence_tolerance: f64,
    pub convergence_hold_s: f64,
    pub smoothing_s: f64,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            sample_interval_ms: 100,
            accuracy_threshold_ms: 5.0,
            convergence_tolerance: 0.1,
            convergence_hold_s: 2.0,
            smoothing_s: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default)]
    pub link: Option<LinkToml>,
    #[serde(default)]
    pub random: Option<RandomSpec>,
    #[serde(default)]
    pub flows: Vec<FlowSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub ppo: PpoHyper,
    #[serde(default)]
    pub agents: CoopConfig,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

fn default_name() -> String {
    "scenario".into()
}

fn mbps_to_bps(mbps: f64) -> u64 {
    (mbps * 1e6).round() as u64
}

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1e3).round() as u64
}

fn range_ok(r: [f64; 2]) -> bool {
    r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1]
}

fn draw<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

/// SplitMix64 finalizer, used to derive per-episode seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: ScenarioSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// sha256 over the canonical JSON form.
    pub fn config_hash(&self) -> String {
        super::manifest::sha256_hex(&serde_json::to_vec(self).expect("scenario serializes"))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s {} must be positive", self.duration_s));
        }
        match (&self.link, &self.random) {
            (None, None) => return bad("either [link] or [random] is required".into()),
            (Some(l), _) => {
                if !(l.capacity_mbps > 0.0 && l.rtt_ms > 0.0 && l.buffer_bdp > 0.0) {
                    return bad("link capacity, rtt and buffer must be positive".into());
                }
            }
            _ => {}
        }
        if let Some(r) = &self.random {
            if !range_ok(r.bandwidth_mbps) || !range_ok(r.rtt_ms) || !range_ok(r.interval_s) {
                return bad("random ranges must be positive and ordered".into());
            }
            if self.flows.is_empty() && r.flows == 0 {
                return bad("random scenario needs at least one flow".into());
            }
        } else if self.flows.is_empty() && !self.events.iter().any(|e| matches!(e, EventSpec::FlowJoin { .. })) {
            return bad("scenario has no flows".into());
        }
        for (i, f) in self.flows.iter().enumerate() {
            let stop_ok = f.stop_s.is_none_or(|s| s > f.start_s);
            if !(f.start_s >= 0.0) || !stop_ok {
                return bad(format!("flow {i}: need 0 <= start_s < stop_s"));
            }
        }
        for e in &self.events {
            let t = e.at_s();
            if !(t >= 0.0 && t <= self.duration_s) {
                return bad(format!("event at {t} s outside [0, {}]", self.duration_s));
            }
            match *e {
                EventSpec::SetBandwidth { mbps, .. } if !(mbps > 0.0) => return bad("bandwidth must be positive".into()),
                EventSpec::SetLatency { rtt_ms, .. } if !(rtt_ms > 0.0) => return bad("latency must be positive".into()),
                _ => {}
            }
        }
        self.env_config().validate().map_err(HarnessError::from)?;
        self.ppo.validate().map_err(HarnessError::from)?;
        self.agents.validate().map_err(HarnessError::from)?;
        if !(self.train.online_learning_rate > 0.0 && self.train.online_learning_rate.is_finite()) {
            return bad("online_learning_rate must be positive".into());
        }
        if self.train.online_eval && self.agents.agents != 1 {
            return bad("online evaluation needs a single agent".into());
        }
        let m = &self.metrics;
        if m.sample_interval_ms == 0 || !(m.accuracy_threshold_ms > 0.0) || !(m.convergence_tolerance > 0.0) {
            return bad("metric parameters must be positive".into());
        }
        if !(m.convergence_hold_s >= 0.0) || !(m.smoothing_s >= 0.0) {
            return bad("hold and smoothing must be non-negative".into());
        }
        Ok(())
    }

    /// Largest capacity the scenario can reach, in bit/s.
    pub fn max_capacity_bps(&self) -> f64 {
        let mut m: f64 = 0.0;
        if let Some(l) = &self.link {
            m = m.max(l.capacity_mbps * 1e6);
        }
        if let Some(r) = &self.random {
            m = m.max(r.bandwidth_mbps[1] * 1e6);
        }
        for e in &self.events {
            if let EventSpec::SetBandwidth { mbps, .. } = e {
                m = m.max(mbps * 1e6);
            }
        }
        m
    }

    /// Environment settings with the automatic normalizer applied.
    pub fn env_config(&self) -> EnvConfig {
        let mut env = self.env.clone();
        if self.train.auto_normalizer && self.max_capacity_bps() > 0.0 {
            env.reward.throughput_normalizer_bps = self.max_capacity_bps();
        }
        env
    }

    pub fn end(&self) -> SimTime {
        SimTime::from_secs_f64(self.duration_s)
    }

    /// Concrete link and event list for one episode.
    pub fn realize_events(&self, episode: u64) -> (u64, LinkSpec, Vec<NetworkEvent>) {
        let sim_seed = mix_seed(self.seed, episode);
        let mut rng = ChaCha8Rng::seed_from_u64(sim_seed);
        let mut events = Vec::new();
        let (capacity_bps, rtt_us, buffer_bdp) = match (&self.random, &self.link) {
            (Some(r), link) => {
                let cap = mbps_to_bps(draw(&mut rng, r.bandwidth_mbps));
                let rtt = ms_to_us(draw(&mut rng, r.rtt_ms));
                let mut t = 0.0;
                loop {
                    t += draw(&mut rng, r.interval_s);
                    if t >= self.duration_s {
                        break;
                    }
                    let at = SimTime::from_secs_f64(t);
                    let bps = mbps_to_bps(draw(&mut rng, r.bandwidth_mbps));
                    let rtt_us = ms_to_us(draw(&mut rng, r.rtt_ms));
                    events.push(NetworkEvent::new(at, EventKind::SetBandwidth { bps }));
                    events.push(NetworkEvent::new(at, EventKind::SetLatency { rtt_us }));
                }
                (cap, rtt, link.as_ref().map_or(default_buffer_bdp(), |l| l.buffer_bdp))
            }
            (None, Some(l)) => (mbps_to_bps(l.capacity_mbps), ms_to_us(l.rtt_ms), l.buffer_bdp),
            (None, None) => unreachable!("validated"),
        };
        let link = LinkSpec::with_bdp_buffer(capacity_bps, rtt_us, buffer_bdp);
        let n_random = self.random.as_ref().map_or(0, |r| r.flows);
        if self.flows.is_empty() {
            for f in 0..n_random {
                events.push(NetworkEvent::new(SimTime::ZERO, EventKind::FlowJoin { flow: f }));
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            let flow = i as u32;
            events.push(NetworkEvent::new(SimTime::from_secs_f64(f.start_s), EventKind::FlowJoin { flow }));
            if let Some(stop) = f.stop_s {
                events.push(NetworkEvent::new(SimTime::from_secs_f64(stop), EventKind::FlowLeave { flow }));
            }
        }
        events.extend(self.events.iter().map(|e| e.to_event()));
        (sim_seed, link, events)
    }

    pub fn realize(&self, episode: u64, sample_interval_us: Option<u64>) -> Result<Episode, EnvError> {
        let (seed, link, events) = self.realize_events(episode);
        let mut cfg = SimConfig::new(seed, link);
        if let Some(us) = sample_interval_us {
            cfg = cfg.with_sampling(us);
        }
        let mut sim = Simulator::new(cfg)?;
        for e in events {
            sim.schedule(e)?;
        }
        Ok(Episode { sim, end: self.end() })
    }

    /// Endless stream of fresh episodes for rollout actor `actor`.
    pub fn training_source(&self, actor: usize) -> Box<dyn EpisodeSource> {
        let spec = self.clone();
        let mut k = 0u64;
        Box::new(move || {
            let ep = spec.realize((actor as u64 + 1) << 32 | k, None);
            k += 1;
            ep
        })
    }

    /// Same scenario under a different base seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    /// Join and leave times, in seconds, in time order.
    pub fn membership_events(&self, episode: u64) -> Vec<f64> {
        let (_, _, events) = self.realize_events(episode);
        let mut t: Vec<f64> = events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::FlowJoin { .. } | EventKind::FlowLeave { .. }))
            .map(|e| e.at.as_secs_f64())
            .collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2A: &str = r#"
name = "fig2a"
seed = 1
duration_s = 40.0

[link]
capacity_mbps = 20.0
rtt_ms = 40.0

[[flows]]
start_s = 0.0

[[events]]
type = "set_latency"
at_s = 11.0
rtt_ms = 400.0
"#;

    #[test]
    fn parses_fixed_scenario() {
        let s = ScenarioSpec::from_toml(FIG2A).unwrap();
        let (_, link, events) = s.realize_events(0);
        assert_eq!(link.capacity_bps, 20_000_000);
        assert_eq!(link.rtt_us(), 40_000);
        assert_eq!(events.len(), 2);
        assert_eq!(s.env_config().reward.throughput_normalizer_bps, 20e6);
        let back = ScenarioSpec::from_toml(&s.to_toml()).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.config_hash(), s.config_hash());
    }

    #[test]
    fn random_is_seeded() {
        let s = ScenarioSpec::from_toml("duration_s = 256.0\nseed = 4\n[random]\nflows = 2\n").unwrap();
        let a = s.realize_events(3);
        assert_eq!(a, s.realize_events(3));
        assert_ne!(a.2, s.realize_events(4).2);
        for e in &a.2 {
            match e.kind {
                EventKind::SetBandwidth { bps } => assert!((1_000_000..=10_000_000).contains(&bps)),
                EventKind::SetLatency { rtt_us } => assert!((10_000..=50_000).contains(&rtt_us)),
                EventKind::FlowJoin { flow } => assert!(flow < 2),
                _ => panic!("unexpected event"),
            }
        }
        let times: Vec<u64> = a.2.iter().filter(|e| e.at > SimTime::ZERO).map(|e| e.at.as_micros()).collect();
        assert!(times.windows(2).all(|w| w[1] >= w[0]));
        assert!(times.windows(2).all(|w| w[1] == w[0] || w[1] - w[0] >= 1_000_000));
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(ScenarioSpec::from_toml("duration_s = -1.0\n[link]\ncapacity_mbps = 1.0\nrtt_ms = 1.0\n[[flows]]\n"), Err(HarnessError::Config(_))));
        assert!(matches!(ScenarioSpec::from_toml("duration_s = 10.0\nbogus = 1\n"), Err(HarnessError::Parse(_))));
        assert!(ScenarioSpec::from_toml("duration_s = 10.0\n[link]\ncapacity_mbps = 1.0\nrtt_ms = 1.0\n").is_err());
        let late = format!("{FIG2A}\n[[events]]\ntype = \"flow_join\"\nat_s = 99.0\nflow = 1\n");
        assert!(ScenarioSpec::from_toml(&late).is_err());
        let e = ScenarioSpec::from_toml("duration_s = 0.0").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn membership_times() {
        let text = "duration_s = 30.0\n[link]\ncapacity_mbps = 10.0\nrtt_ms = 40.0\n\
                    [[flows]]\nstart_s = 0.0\nstop_s = 20.0\n[[flows]]\nstart_s = 5.0\n";
        let s = ScenarioSpec::from_toml(text).unwrap();
        assert_eq!(s.membership_events(0), vec![0.0, 5.0, 20.0]);
        let ep = s.realize(0, Some(100_000)).unwrap();
        assert_eq!(ep.end, SimTime::from_secs(30));
    }
}
