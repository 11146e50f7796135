use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub alpha: f64,
    pub throughput_normalizer_bps: f64,
    /// Sigmoid steepness per millisecond of estimation error.
    pub sigmoid_scale_per_ms: f64,
    /// Multiply the sigmoid term by two so a perfect estimate scores one.
    pub double_sigmoid: bool,
    pub k_p: f64,
    pub k_d: f64,
    pub k_i: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            throughput_normalizer_bps: 10e6,
            sigmoid_scale_per_ms: 0.05,
            double_sigmoid: false,
            k_p: 0.0,
            k_d: 0.0,
            k_i: 0.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !(self.throughput_normalizer_bps > 0.0) {
            return Err("throughput normalizer must be positive".into());
        }
        if !(self.sigmoid_scale_per_ms >= 0.0) {
            return Err("sigmoid scale must be non-negative".into());
        }
        Ok(())
    }

    fn pid_enabled(&self) -> bool {
        self.k_p != 0.0 || self.k_d != 0.0 || self.k_i != 0.0
    }
}

/// Aggregates over the T1 ticks of one control interval. Sums rather than
/// means so that several groups can be pooled exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IntervalStats {
    pub ticks: u32,
    /// Sum over ticks of the group's total delivery rate.
    pub throughput_sum_bps: f64,
    /// Sum over (tick, flow) of |RTprop estimate - true base RTT| in ms.
    pub error_sum_ms: f64,
    pub error_count: u64,
}

impl IntervalStats {
    pub fn mean_throughput_bps(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.throughput_sum_bps / self.ticks as f64
        }
    }

    pub fn mean_abs_error_ms(&self) -> Option<f64> {
        (self.error_count > 0).then(|| self.error_sum_ms / self.error_count as f64)
    }

    /// Team aggregate: throughput adds up per tick, errors pool.
    pub fn pool(parts: &[IntervalStats]) -> IntervalStats {
        IntervalStats {
            ticks: parts.iter().map(|p| p.ticks).max().unwrap_or(0),
            throughput_sum_bps: parts.iter().map(|p| p.throughput_sum_bps).sum(),
            error_sum_ms: parts.iter().map(|p| p.error_sum_ms).sum(),
            error_count: parts.iter().map(|p| p.error_count).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    /// No monitor sample fell inside the interval.
    pub no_data: bool,
}

/// One T1 point of the optional PID shaping terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidSample {
    pub throughput_bps: f64,
    /// Measured RTT in seconds.
    pub rtt_s: f64,
    /// Ground-truth base RTT in seconds.
    pub latency_s: f64,
    pub latency_estimate_s: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidTerms {
    pub p: f64,
    pub d: f64,
    pub i: f64,
}

impl PidTerms {
    pub fn sum(&self) -> f64 {
        self.p + self.d + self.i
    }
}

/// Least-squares slope of `ys` sampled every `dt_s`.
fn slope(ys: &[f64], dt_s: f64) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let t_mean = (n - 1.0) / 2.0 * dt_s;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (k, y) in ys.iter().enumerate() {
        let dt = k as f64 * dt_s - t_mean;
        num += dt * (y - y_mean);
        den += dt * dt;
    }
    num / den
}

/// P on normalized throughput over mean RTT, D on the RTT slope after a
/// moving-average pass of `smoothing` samples, I on the integrated estimate
/// error.
pub fn pid_terms(
    series: &[PidSample],
    dt_s: f64,
    smoothing: usize,
    cfg: &RewardConfig,
) -> Result<PidTerms, EnvError> {
    if series.is_empty() {
        return Ok(PidTerms::default());
    }
    let n = series.len() as f64;
    let mean_rtt = series.iter().map(|s| s.rtt_s).sum::<f64>() / n;
    if mean_rtt <= 0.0 {
        return Err(EnvError::ZeroLatency);
    }
    let mean_thr = series.iter().map(|s| s.throughput_bps).sum::<f64>() / n;
    let rtts: Vec<f64> = series.iter().map(|s| s.rtt_s).collect();
    let smoothed = crate::agents::robust::moving_average(&rtts, smoothing);
    let integral: f64 = series.iter().map(|s| (s.latency_estimate_s - s.latency_s) * dt_s).sum();
    Ok(PidTerms {
        p: cfg.k_p * (mean_thr / cfg.throughput_normalizer_bps) / mean_rtt,
        d: cfg.k_d * slope(&smoothed, dt_s),
        i: cfg.k_i * integral,
    })
}

fn sigmoid_term(err_ms: f64, cfg: &RewardConfig) -> f64 {
    let s = 1.0 / (1.0 + (cfg.sigmoid_scale_per_ms * err_ms.abs()).exp());
    if cfg.double_sigmoid {
        2.0 * s
    } else {
        s
    }
}

/// Weighted throughput plus a decreasing sigmoid of the estimation error.
/// An interval without any RTprop estimate earns nothing for accuracy.
pub fn compute_reward(stats: &IntervalStats, cfg: &RewardConfig) -> RewardOutcome {
    if stats.ticks == 0 {
        return RewardOutcome {
            reward: 0.0,
            no_data: true,
        };
    }
    let thr = stats.mean_throughput_bps() / cfg.throughput_normalizer_bps;
    let acc = stats.mean_abs_error_ms().map_or(0.0, |e| sigmoid_term(e, cfg));
    RewardOutcome {
        reward: cfg.alpha * thr + (1.0 - cfg.alpha) * acc,
        no_data: false,
    }
}

/// Reward including PID shaping when any coefficient is non-zero.
pub fn shaped_reward(
    stats: &IntervalStats,
    series: &[PidSample],
    dt_s: f64,
    smoothing: usize,
    cfg: &RewardConfig,
) -> Result<RewardOutcome, EnvError> {
    let mut out = compute_reward(stats, cfg);
    if cfg.pid_enabled() && !out.no_data {
        out.reward += pid_terms(series, dt_s, smoothing, cfg)?.sum();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(thr_bps: f64, err_ms: Option<f64>) -> IntervalStats {
        IntervalStats {
            ticks: 20,
            throughput_sum_bps: thr_bps * 20.0,
            error_sum_ms: err_ms.unwrap_or(0.0) * 20.0,
            error_count: if err_ms.is_some() { 20 } else { 0 },
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let r = compute_reward(&stats(8e6, Some(0.0)), &cfg).reward;
        assert!((r - 0.65).abs() < 1e-12);
        let r = compute_reward(&stats(0.0, Some(0.0)), &cfg).reward;
        assert!((r - 0.25).abs() < 1e-12);
        let r = compute_reward(&stats(8e6, Some(1e6)), &cfg).reward;
        assert!((r - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_interval_is_flagged() {
        let out = compute_reward(&IntervalStats::default(), &RewardConfig::default());
        assert_eq!(out, RewardOutcome { reward: 0.0, no_data: true });
    }

    #[test]
    fn doubled_sigmoid_peaks_at_one() {
        let cfg = RewardConfig {
            alpha: 0.0,
            double_sigmoid: true,
            ..Default::default()
        };
        assert_eq!(compute_reward(&stats(0.0, Some(0.0)), &cfg).reward, 1.0);
    }

    #[test]
    fn pid_examples() {
        let cfg = RewardConfig {
            k_p: 1.0,
            k_d: 1.0,
            k_i: 1.0,
            ..Default::default()
        };
        let flat: Vec<PidSample> = (0..10)
            .map(|_| PidSample {
                throughput_bps: 5e6,
                rtt_s: 0.04,
                latency_s: 0.04,
                latency_estimate_s: 0.04,
            })
            .collect();
        let t = pid_terms(&flat, 0.1, 1, &cfg).unwrap();
        assert!(t.d.abs() < 1e-12);
        assert_eq!(t.i, 0.0);
        assert!((t.p - 0.5 / 0.04).abs() < 1e-12);

        // 40 -> 50 ms over one second, eleven samples
        let ramp: Vec<PidSample> = (0..=10)
            .map(|k| PidSample {
                rtt_s: 0.040 + 0.001 * k as f64,
                ..flat[0]
            })
            .collect();
        let t = pid_terms(&ramp, 0.1, 1, &cfg).unwrap();
        assert!((t.d - 0.010).abs() < 1e-12);

        let zero = [PidSample { rtt_s: 0.0, ..flat[0] }];
        assert!(matches!(pid_terms(&zero, 0.1, 1, &cfg), Err(EnvError::ZeroLatency)));
    }

    #[test]
    fn pooled_stats() {
        let a = stats(4e6, Some(2.0));
        let b = stats(6e6, None);
        let p = IntervalStats::pool(&[a, b]);
        assert_eq!(p.mean_throughput_bps(), 10e6);
        assert_eq!(p.mean_abs_error_ms(), Some(2.0));
    }

    proptest! {
        #[test]
        fn reward_bounds_and_monotonicity(
            alpha in 0.0f64..=1.0,
            thr in 0.0f64..10e6,
            e1 in 0.0f64..500.0,
            de in 0.001f64..500.0,
        ) {
            let cfg = RewardConfig { alpha, ..Default::default() };
            let r1 = compute_reward(&stats(thr, Some(e1)), &cfg).reward;
            let r2 = compute_reward(&stats(thr, Some(e1 + de)), &cfg).reward;
            prop_assert!(r1 >= 0.0);
            prop_assert!(r1 <= alpha * 1.0 + (1.0 - alpha) * 0.5 + 1e-12);
            if alpha < 1.0 && (1.0 - alpha) * (r1 - r2).abs() > 0.0 {
                prop_assert!(r2 < r1);
            }
        }
    }
}
