//! Measurement filtering on the host side: low-pass smoothing and rule-based
//! rejection of implausible tuples.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{FeatureRow, FlowObservation, F_DELIVERY_RATE, F_SRTT};
use crate::netsim::FlowId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessConfig {
    pub ema_alpha: f64,
    /// Window, in samples, of the moving average used for slope estimates.
    pub moving_window: usize,
    pub rtt_min_us: f64,
    pub rtt_max_us: f64,
    /// Rates above capacity times this margin are rejected.
    pub rate_margin: f64,
    pub reward_min: f64,
    pub reward_max: f64,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        Self {
            ema_alpha: 0.5,
            moving_window: 5,
            rtt_min_us: 1.0,
            rtt_max_us: 10_000_000.0,
            rate_margin: 1.5,
            reward_min: -10.0,
            reward_max: 10.0,
        }
    }
}

impl RobustnessConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(format!("ema_alpha {} outside (0, 1]", self.ema_alpha));
        }
        if self.moving_window == 0 {
            return Err("moving_window must be at least 1".into());
        }
        if !(self.rtt_min_us < self.rtt_max_us) || !(self.reward_min < self.reward_max) || self.rate_margin <= 0.0 {
            return Err("sanity bounds are not well ordered".into());
        }
        Ok(())
    }
}

pub fn ema_filter(series: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for &x in series {
        let y = match out.last() {
            None => x,
            Some(&prev) => alpha * x + (1.0 - alpha) * prev,
        };
        out.push(y);
    }
    out
}

pub fn moving_average(series: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    (0..series.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(w);
            series[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    Rtt,
    Rate,
    Reward,
    Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(Rule),
}

/// Fields of a (measurement, action, reward) tuple; absent parts are not
/// checked.
#[derive(Debug, Clone, Copy, Default)]
pub struct Tuple {
    pub rtt_us: Option<f64>,
    pub rate_bps: Option<f64>,
    pub capacity_bps: f64,
    /// Chosen indices with the grid sizes they must fall in.
    pub action: Option<((usize, usize), (usize, usize))>,
    pub reward: Option<f64>,
}

pub fn sanity_check(t: &Tuple, cfg: &RobustnessConfig) -> Verdict {
    if let Some(rtt) = t.rtt_us {
        if !(rtt >= cfg.rtt_min_us && rtt <= cfg.rtt_max_us) {
            return Verdict::Reject(Rule::Rtt);
        }
    }
    if let Some(rate) = t.rate_bps {
        if !(rate >= 0.0 && rate <= t.capacity_bps * cfg.rate_margin) {
            return Verdict::Reject(Rule::Rate);
        }
    }
    if let Some(r) = t.reward {
        if !(r >= cfg.reward_min && r <= cfg.reward_max) {
            return Verdict::Reject(Rule::Reward);
        }
    }
    if let Some(((i1, i2), (k1, k2))) = t.action {
        if i1 >= k1 || i2 >= k2 {
            return Verdict::Reject(Rule::Action);
        }
    }
    Verdict::Accept
}

/// Per-flow smoothed view built from T1 samples.
#[derive(Debug, Clone)]
pub struct Monitor {
    cfg: RobustnessConfig,
    latest: BTreeMap<FlowId, FeatureRow>,
    accepted: u64,
    rejected: u64,
}

impl Monitor {
    pub fn new(cfg: RobustnessConfig) -> Self {
        Self {
            cfg,
            latest: BTreeMap::new(),
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn config(&self) -> &RobustnessConfig {
        &self.cfg
    }

    pub fn counts(&self) -> (u64, u64) {
        (self.accepted, self.rejected)
    }

    pub fn reset(&mut self) {
        self.latest.clear();
        self.accepted = 0;
        self.rejected = 0;
    }

    /// Feeds one round of raw samples; `active` lists the flows that still
    /// exist so departed flows are forgotten.
    pub fn tick(&mut self, raw: &[FlowObservation], active: &[FlowId], capacity_bps: f64) {
        self.latest.retain(|id, _| active.contains(id));
        let a = self.cfg.ema_alpha;
        for obs in raw {
            let tuple = Tuple {
                rtt_us: Some(obs.raw[F_SRTT]),
                rate_bps: Some(obs.raw[F_DELIVERY_RATE]),
                capacity_bps,
                ..Default::default()
            };
            if sanity_check(&tuple, &self.cfg) != Verdict::Accept {
                self.rejected += 1;
                continue;
            }
            self.accepted += 1;
            self.latest
                .entry(obs.flow_id)
                .and_modify(|prev| {
                    for (p, x) in prev.iter_mut().zip(obs.raw) {
                        *p = a * x + (1.0 - a) * *p;
                    }
                })
                .or_insert(obs.raw);
        }
    }

    /// Filtered rows ordered by flow id.
    pub fn observations(&self) -> Vec<FlowObservation> {
        self.latest
            .iter()
            .map(|(&flow_id, &raw)| FlowObservation { flow_id, raw })
            .collect()
    }
}
