//! Pure functions from traces to the reported metrics.

use std::collections::BTreeMap;

use super::HarnessError;
use crate::netsim::{TraceLog, TraceRow};

fn error_ms(row: &TraceRow) -> Option<f64> {
    (row.bbr.rtprop_us > 0).then(|| (row.bbr.rtprop_us as f64 - row.true_rtprop_us as f64) / 1e3)
}

/// Share of trace samples whose RTprop estimate has squared error at most
/// `threshold_ms`². Samples without an estimate count as inaccurate.
pub fn estimation_accuracy(trace: &TraceLog, threshold_ms: f64) -> Result<f64, HarnessError> {
    if trace.is_empty() {
        return Err(HarnessError::Runtime("empty trace".into()));
    }
    let limit = threshold_ms * threshold_ms;
    let hits = trace
        .rows
        .iter()
        .filter(|r| error_ms(r).is_some_and(|e| e * e <= limit))
        .count();
    Ok(hits as f64 / trace.rows.len() as f64)
}

/// Squared RTprop errors in ms², one per sample that has an estimate.
pub fn squared_errors_ms2(trace: &TraceLog) -> Vec<f64> {
    trace.rows.iter().filter_map(error_ms).map(|e| e * e).collect()
}

pub fn throughputs_bps(trace: &TraceLog) -> Vec<f64> {
    trace.rows.iter().map(|r| r.stats.delivery_rate_bps).collect()
}

pub fn peak_rtt_us(trace: &TraceLog) -> f64 {
    trace.rows.iter().map(|r| r.stats.srtt_us).fold(0.0, f64::max)
}

/// Empirical CDF as `(x, P[X <= x])` at every distinct sample value.
pub fn cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *x => last.1 = p,
            _ => out.push((*x, p)),
        }
    }
    out
}

/// Keeps at most `max_points` CDF steps, always including the last.
pub fn thin_cdf(points: &[(f64, f64)], max_points: usize) -> Vec<(f64, f64)> {
    if points.len() <= max_points || max_points < 2 {
        return points.to_vec();
    }
    let last = points.len() - 1;
    let mut idx: Vec<usize> = (0..max_points).map(|k| k * last / (max_points - 1)).collect();
    idx.dedup();
    idx.into_iter().map(|i| points[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSpec {
    /// Allowed relative deviation from the fair share.
    pub tolerance: f64,
    pub hold_s: f64,
    /// Trailing moving-average window applied to each flow's throughput.
    pub smoothing_s: f64,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            tolerance: 0.1,
            hold_s: 2.0,
            smoothing_s: 1.0,
        }
    }
}

struct Sample {
    time_us: u64,
    capacity_bps: u64,
    rates: Vec<f64>,
}

fn smoothed_samples(trace: &TraceLog, smoothing_us: u64) -> Vec<Sample> {
    let mut by_time: BTreeMap<u64, Vec<&TraceRow>> = BTreeMap::new();
    for r in &trace.rows {
        by_time.entry(r.time_us).or_default().push(r);
    }
    let mut history: BTreeMap<u32, Vec<(u64, f64)>> = BTreeMap::new();
    let mut out = Vec::with_capacity(by_time.len());
    for (t, rows) in by_time {
        let mut rates = Vec::with_capacity(rows.len());
        for r in &rows {
            let h = history.entry(r.stats.flow_id).or_default();
            h.push((t, r.stats.delivery_rate_bps));
            let window: Vec<f64> = h
                .iter()
                .rev()
                .take_while(|(s, _)| *s == t || *s + smoothing_us > t)
                .map(|p| p.1)
                .collect();
            rates.push(window.iter().sum::<f64>() / window.len() as f64);
        }
        out.push(Sample {
            time_us: t,
            capacity_bps: rows[0].capacity_bps,
            rates,
        });
    }
    out
}

fn fair(s: &Sample, tol: f64) -> bool {
    if s.rates.is_empty() {
        return false;
    }
    let share = s.capacity_bps as f64 / s.rates.len() as f64;
    s.rates.iter().all(|r| (r - share).abs() <= tol * share)
}

/// Time from each membership event until all active flows sit within the
/// tolerance band around the fair share and stay there for the hold time.
/// Later events do not end the search; a run that never settles before the
/// trace ends reports `f64::INFINITY`.
pub fn convergence_times(trace: &TraceLog, event_times_s: &[f64], spec: &ConvergenceSpec) -> Vec<f64> {
    let samples = smoothed_samples(trace, (spec.smoothing_s * 1e6).round() as u64);
    let hold_us = (spec.hold_s * 1e6).round() as u64;
    event_times_s
        .iter()
        .map(|t| {
            let e = (t * 1e6).round() as u64;
            let mut start: Option<u64> = None;
            for s in samples.iter().filter(|s| s.time_us >= e) {
                if fair(s, spec.tolerance) {
                    let t0 = *start.get_or_insert(s.time_us);
                    if s.time_us - t0 >= hold_us {
                        return (t0 - e) as f64 / 1e6;
                    }
                } else {
                    start = None;
                }
            }
            f64::INFINITY
        })
        .collect()
}

/// Median with `+inf` treated as larger than every finite value.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            a.max(b)
        } else {
            (a + b) / 2.0
        }
    }
}
