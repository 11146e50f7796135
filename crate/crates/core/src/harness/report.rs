//! Per-run metric reports and their comparison.
//!
//! Reports are stored as long-format CSV with columns `metric,index,x,y`.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};

use super::metrics::{self, median, ConvergenceSpec};
use super::HarnessError;
use crate::env::EnvStepRecord;
use crate::netsim::TraceLog;

const CDF_POINTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub policy: String,
    pub accuracy: f64,
    pub peak_rtt_ms: f64,
    pub convergence_s: Vec<f64>,
    /// `(ms², P)` points.
    pub sq_error_cdf: Vec<(f64, f64)>,
    /// `(bit/s, P)` points.
    pub throughput_cdf: Vec<(f64, f64)>,
    /// Mean reward of each tuning step.
    pub reward_curve: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    metric: String,
    index: usize,
    x: String,
    y: String,
}

impl MetricsReport {
    #[allow(clippy::too_many_arguments)]
    pub fn from_run(
        scenario: &str,
        scenario_hash: &str,
        seed: u64,
        policy: &str,
        trace: &TraceLog,
        records: &[EnvStepRecord],
        membership_s: &[f64],
        threshold_ms: f64,
        conv: &ConvergenceSpec,
    ) -> Result<Self, HarnessError> {
        let mut reward_curve: Vec<(u64, f64, u32)> = Vec::new();
        for r in records {
            match reward_curve.iter_mut().find(|c| c.0 == r.step) {
                Some(c) => {
                    c.1 += r.reward;
                    c.2 += 1;
                }
                None => reward_curve.push((r.step, r.reward, 1)),
            }
        }
        reward_curve.sort_by_key(|c| c.0);
        Ok(Self {
            scenario: scenario.to_string(),
            scenario_hash: scenario_hash.to_string(),
            seed,
            policy: policy.to_string(),
            accuracy: metrics::estimation_accuracy(trace, threshold_ms)?,
            peak_rtt_ms: metrics::peak_rtt_us(trace) / 1e3,
            convergence_s: metrics::convergence_times(trace, membership_s, conv),
            sq_error_cdf: metrics::thin_cdf(&metrics::cdf(&metrics::squared_errors_ms2(trace)), CDF_POINTS),
            throughput_cdf: metrics::thin_cdf(&metrics::cdf(&metrics::throughputs_bps(trace)), CDF_POINTS),
            reward_curve: reward_curve.into_iter().map(|(_, s, n)| s / n as f64).collect(),
        })
    }

    pub fn median_convergence_s(&self) -> f64 {
        median(&self.convergence_s)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        let mut put = |metric: &str, index: usize, x: String, y: String| {
            w.serialize(Row {
                metric: metric.into(),
                index,
                x,
                y,
            })
        };
        put("scenario", 0, self.scenario.clone(), self.scenario_hash.clone())?;
        put("seed", 0, self.seed.to_string(), String::new())?;
        put("policy", 0, self.policy.clone(), String::new())?;
        put("accuracy", 0, self.accuracy.to_string(), String::new())?;
        put("peak_rtt_ms", 0, self.peak_rtt_ms.to_string(), String::new())?;
        for (i, t) in self.convergence_s.iter().enumerate() {
            put("convergence_s", i, t.to_string(), String::new())?;
        }
        for (i, (x, p)) in self.sq_error_cdf.iter().enumerate() {
            put("sq_error_cdf", i, x.to_string(), p.to_string())?;
        }
        for (i, (x, p)) in self.throughput_cdf.iter().enumerate() {
            put("throughput_cdf", i, x.to_string(), p.to_string())?;
        }
        for (i, r) in self.reward_curve.iter().enumerate() {
            put("reward", i, r.to_string(), String::new())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: io::Read>(input: R) -> Result<Self, HarnessError> {
        let bad = |m: String| HarnessError::Runtime(format!("malformed report: {m}"));
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let mut rep = MetricsReport {
            scenario: String::new(),
            scenario_hash: String::new(),
            seed: 0,
            policy: String::new(),
            accuracy: f64::NAN,
            peak_rtt_ms: f64::NAN,
            convergence_s: vec![],
            sq_error_cdf: vec![],
            throughput_cdf: vec![],
            reward_curve: vec![],
        };
        let mut seen_scenario = false;
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let r = row?;
            match r.metric.as_str() {
                "scenario" => {
                    rep.scenario = r.x;
                    rep.scenario_hash = r.y;
                    seen_scenario = true;
                }
                "seed" => rep.seed = r.x.parse().map_err(|e| bad(format!("seed: {e}")))?,
                "policy" => rep.policy = r.x,
                "accuracy" => rep.accuracy = num(&r.x)?,
                "peak_rtt_ms" => rep.peak_rtt_ms = num(&r.x)?,
                "convergence_s" => rep.convergence_s.push(num(&r.x)?),
                "sq_error_cdf" => rep.sq_error_cdf.push((num(&r.x)?, num(&r.y)?)),
                "throughput_cdf" => rep.throughput_cdf.push((num(&r.x)?, num(&r.y)?)),
                "reward" => rep.reward_curve.push(num(&r.x)?),
                other => return Err(bad(format!("unknown metric {other:?}"))),
            }
        }
        if !seen_scenario {
            return Err(bad("missing scenario row".into()));
        }
        Ok(rep)
    }
}

/// Candidate B measured against baseline A.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub candidate: String,
    pub median_convergence_s: (f64, f64),
    pub peak_rtt_ms: (f64, f64),
    pub accuracy: (f64, f64),
    /// A / B of the median convergence times.
    pub convergence_speedup: f64,
    /// 1 - B / A of the peak RTTs.
    pub peak_rtt_reduction: f64,
    /// B - A of the accuracy fractions.
    pub accuracy_delta: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if a == b {
        1.0
    } else {
        a / b
    }
}

pub fn compare(a: &MetricsReport, b: &MetricsReport) -> Result<Comparison, HarnessError> {
    if a.scenario != b.scenario || a.scenario_hash != b.scenario_hash || a.seed != b.seed {
        return Err(HarnessError::Config(format!(
            "reports come from different scenarios: {} (seed {}) vs {} (seed {})",
            a.scenario, a.seed, b.scenario, b.seed
        )));
    }
    let (ca, cb) = (a.median_convergence_s(), b.median_convergence_s());
    Ok(Comparison {
        baseline: a.policy.clone(),
        candidate: b.policy.clone(),
        median_convergence_s: (ca, cb),
        peak_rtt_ms: (a.peak_rtt_ms, b.peak_rtt_ms),
        accuracy: (a.accuracy, b.accuracy),
        convergence_speedup: ratio(ca, cb),
        peak_rtt_reduction: 1.0 - ratio(b.peak_rtt_ms, a.peak_rtt_ms),
        accuracy_delta: b.accuracy - a.accuracy,
    })
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<24}{:>14}{:>14}", "metric", self.baseline, self.candidate);
        let _ = writeln!(
            s,
            "{:<24}{:>14.3}{:>14.3}",
            "median convergence s", self.median_convergence_s.0, self.median_convergence_s.1
        );
        let _ = writeln!(s, "{:<24}{:>14.3}{:>14.3}", "peak rtt ms", self.peak_rtt_ms.0, self.peak_rtt_ms.1);
        let _ = writeln!(s, "{:<24}{:>14.4}{:>14.4}", "estimation accuracy", self.accuracy.0, self.accuracy.1);
        let _ = writeln!(s, "convergence speedup     {:.3}x", self.convergence_speedup);
        let _ = writeln!(s, "peak rtt reduction      {:.1}%", self.peak_rtt_reduction * 100.0);
        let _ = writeln!(s, "accuracy delta          {:+.4}", self.accuracy_delta);
        s
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("metric,baseline,candidate,ratio\n");
        let _ = writeln!(
            s,
            "median_convergence_s,{},{},{}",
            self.median_convergence_s.0, self.median_convergence_s.1, self.convergence_speedup
        );
        let _ = writeln!(
            s,
            "peak_rtt_ms,{},{},{}",
            self.peak_rtt_ms.0,
            self.peak_rtt_ms.1,
            1.0 - self.peak_rtt_reduction
        );
        let _ = writeln!(s, "accuracy,{},{},{}", self.accuracy.0, self.accuracy.1, self.accuracy_delta);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(conv: Vec<f64>, peak: f64, acc: f64) -> MetricsReport {
        MetricsReport {
            scenario: "convergence".into(),
            scenario_hash: "abc".into(),
            seed: 3,
            policy: "vanilla".into(),
            accuracy: acc,
            peak_rtt_ms: peak,
            convergence_s: conv,
            sq_error_cdf: vec![(0.0, 0.5), (2.5, 1.0)],
            throughput_cdf: vec![(1e6, 1.0)],
            reward_curve: vec![0.1, 0.2],
        }
    }

    #[test]
    fn identical_reports() {
        let a = report(vec![1.0, f64::INFINITY, 3.0], 80.0, 0.4);
        let c = compare(&a, &a).unwrap();
        assert_eq!(c.convergence_speedup, 1.0);
        assert_eq!(c.peak_rtt_reduction, 0.0);
        assert_eq!(c.accuracy_delta, 0.0);
        let inf = report(vec![f64::INFINITY], 80.0, 0.4);
        assert_eq!(compare(&inf, &inf).unwrap().convergence_speedup, 1.0);
    }

    #[test]
    fn ratios() {
        let a = report(vec![13.5], 100.0, 0.4);
        let mut b = report(vec![5.0], 60.0, 0.6);
        b.policy = "ppo".into();
        let c = compare(&a, &b).unwrap();
        assert!((c.convergence_speedup - 2.7).abs() < 1e-12);
        assert!((c.peak_rtt_reduction - 0.4).abs() < 1e-12);
        assert!((c.accuracy_delta - 0.2).abs() < 1e-12);
        assert!(c.to_text().contains("2.700x"));
        assert!(c.to_csv_string().starts_with("metric,baseline,candidate,ratio\n"));
    }

    #[test]
    fn mismatch_is_error() {
        let a = report(vec![1.0], 1.0, 0.0);
        let mut b = a.clone();
        b.seed = 4;
        assert!(matches!(compare(&a, &b), Err(HarnessError::Config(_))));
    }

    #[test]
    fn csv_round_trip() {
        let a = report(vec![0.3, f64::INFINITY], 81.25, 1.0 / 3.0);
        let text = a.to_csv_string();
        assert!(text.starts_with("metric,index,x,y\n"));
        assert_eq!(MetricsReport::read_csv(text.as_bytes()).unwrap(), a);
        assert!(MetricsReport::read_csv("metric,index,x,y\nbogus,0,1,\n".as_bytes()).is_err());
    }
}
