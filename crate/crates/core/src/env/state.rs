use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::netsim::{FlowId, FlowStats};
use crate::bbr::BbrSnapshot;

pub const FEATURES: usize = 9;

pub const F_DELIVERY_RATE: usize = 0;
pub const F_SRTT: usize = 1;
pub const F_LOSS: usize = 2;
pub const F_CWND: usize = 3;
pub const F_PACING: usize = 4;
pub const F_BTLBW: usize = 5;
pub const F_RTPROP: usize = 6;
pub const F_PACING_GAIN: usize = 7;
pub const F_CWND_GAIN: usize = 8;

/// Raw, unnormalized per-flow features in column order.
pub type FeatureRow = [f64; FEATURES];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowObservation {
    pub flow_id: FlowId,
    pub raw: FeatureRow,
}

impl FlowObservation {
    pub fn new(stats: &FlowStats, bbr: &BbrSnapshot) -> Self {
        Self {
            flow_id: stats.flow_id,
            raw: [
                stats.delivery_rate_bps,
                stats.srtt_us,
                stats.loss_rate,
                stats.cwnd_bytes as f64,
                stats.pacing_rate_bps,
                bbr.btlbw_bps,
                bbr.rtprop_us as f64,
                bbr.pacing_gain,
                bbr.cwnd_gain,
            ],
        }
    }
}

/// Divisors mapping raw features into [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateScales {
    pub rate_bps: f64,
    pub rtt_us: f64,
    pub cwnd_bytes: f64,
    pub gain: f64,
}

impl Default for StateScales {
    fn default() -> Self {
        Self {
            rate_bps: 20e6,
            rtt_us: 500_000.0,
            cwnd_bytes: 500_000.0,
            gain: 3.0,
        }
    }
}

impl StateScales {
    fn divisors(&self) -> FeatureRow {
        [
            self.rate_bps,
            self.rtt_us,
            1.0,
            self.cwnd_bytes,
            self.rate_bps,
            self.rate_bps,
            self.rtt_us,
            self.gain,
            self.gain,
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.divisors().iter().all(|d| *d > 0.0 && d.is_finite()) {
            Ok(())
        } else {
            Err("state scales must be positive".into())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateTable {
    pub rows: Vec<FeatureRow>,
    /// Flow in each row; `None` marks padding.
    pub flow_ids: Vec<Option<FlowId>>,
}

impl StateTable {
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn f_max(&self) -> usize {
        self.rows.len()
    }
}

fn normalize(raw: &FeatureRow, scales: &StateScales) -> FeatureRow {
    let d = scales.divisors();
    let mut out = [0.0; FEATURES];
    for i in 0..FEATURES {
        let v = raw[i] / d[i];
        out[i] = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }
    out
}

/// Picks at most `f_max` flows, normalizes them and pads with zero rows.
/// Oversubscribed tables keep a uniform sample drawn from `(seed, step)`.
pub fn build_state(obs: &[FlowObservation], f_max: usize, scales: &StateScales, seed: u64, step: u64) -> StateTable {
    let mut chosen: Vec<&FlowObservation> = obs.iter().collect();
    if chosen.len() > f_max {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let picks = rand::seq::index::sample(&mut rng, chosen.len(), f_max);
        chosen = picks.into_iter().map(|i| &obs[i]).collect();
    }
    chosen.sort_by_key(|o| o.flow_id);
    let mut rows: Vec<FeatureRow> = chosen.iter().map(|o| normalize(&o.raw, scales)).collect();
    let mut flow_ids: Vec<Option<FlowId>> = chosen.iter().map(|o| Some(o.flow_id)).collect();
    rows.resize(f_max, [0.0; FEATURES]);
    flow_ids.resize(f_max, None);
    StateTable { rows, flow_ids }
}
