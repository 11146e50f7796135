//! Minimal deterministic SVG line charts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::report::MetricsReport;
use super::HarnessError;
use crate::netsim::TraceLog;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
        }
    }
}

fn bounds(series: &[Series], fixed_y: Option<(f64, f64)>) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    if y0 == y1 {
        y1 = y0 + 1.0;
    }
    ((x0, x1), fixed_y.unwrap_or((y0.min(0.0), y1)))
}

/// Renders the series as polylines. Non-finite points are skipped.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], fixed_y: Option<(f64, f64)>) -> String {
    let ((x0, x1), (y0, y1)) = bounds(series, fixed_y);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, W / 2.0, escape(title));
    let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
            px(xv),
            b + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#,
            l - 4.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y.clamp(y0, y1))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}">{}</text>"#,
            r - 120.0,
            t + 14.0 * (i as f64 + 1.0),
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// CDF chart; each step is drawn as a horizontal then vertical segment.
pub fn cdf_chart(title: &str, x_label: &str, series: &[Series]) -> String {
    let stepped: Vec<Series> = series
        .iter()
        .map(|s| {
            let mut pts = Vec::with_capacity(2 * s.points.len());
            let mut prev = 0.0;
            for &(x, p) in &s.points {
                pts.push((x, prev));
                pts.push((x, p));
                prev = p;
            }
            Series::new(s.label.clone(), pts)
        })
        .collect();
    line_chart(title, x_label, "P[X <= x]", &stepped, Some((0.0, 1.0)))
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a >= 1e6 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 1e3 {
        format!("{:.1}k", v / 1e3)
    } else if a >= 10.0 || a == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn per_flow(trace: &TraceLog, f: impl Fn(&crate::netsim::TraceRow) -> f64) -> Vec<Series> {
    let mut by_flow: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &trace.rows {
        by_flow.entry(r.stats.flow_id).or_default().push((r.time_us as f64 / 1e6, f(r)));
    }
    by_flow.into_iter().map(|(id, pts)| Series::new(format!("flow {id}"), pts)).collect()
}

/// Writes the time-series and CDF charts for one run; returns the paths.
pub fn emit_plots(report: &MetricsReport, trace: &TraceLog, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    let mut rtprop = per_flow(trace, |r| r.bbr.rtprop_us as f64 / 1e3);
    let mut truth: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.time_us as f64 / 1e6, r.true_rtprop_us as f64 / 1e3)).collect();
    truth.dedup();
    rtprop.push(Series::new("true", truth));
    let mut btlbw = per_flow(trace, |r| r.bbr.btlbw_bps / 1e6);
    let mut cap: Vec<(f64, f64)> = trace.rows.iter().map(|r| (r.time_us as f64 / 1e6, r.capacity_bps as f64 / 1e6)).collect();
    cap.dedup();
    btlbw.push(Series::new("capacity", cap));
    let charts = [
        ("rtprop.svg", line_chart("RTprop estimate", "time (s)", "ms", &rtprop, None)),
        ("btlbw.svg", line_chart("BtlBw estimate", "time (s)", "Mbit/s", &btlbw, None)),
        (
            "throughput.svg",
            line_chart("Delivery rate", "time (s)", "Mbit/s", &per_flow(trace, |r| r.stats.delivery_rate_bps / 1e6), None),
        ),
        ("srtt.svg", line_chart("Smoothed RTT", "time (s)", "ms", &per_flow(trace, |r| r.stats.srtt_us / 1e3), None)),
        (
            "sq_error_cdf.svg",
            cdf_chart("RTprop squared error", "ms^2", &[Series::new(report.policy.clone(), report.sq_error_cdf.clone())]),
        ),
        (
            "throughput_cdf.svg",
            cdf_chart(
                "Throughput",
                "Mbit/s",
                &[Series::new(
                    report.policy.clone(),
                    report.throughput_cdf.iter().map(|&(x, p)| (x / 1e6, p)).collect(),
                )],
            ),
        ),
        (
            "reward.svg",
            line_chart(
                "Reward per step",
                "step",
                "reward",
                &[Series::new(
                    report.policy.clone(),
                    report.reward_curve.iter().enumerate().map(|(i, &r)| (i as f64, r)).collect(),
                )],
                None,
            ),
        ),
    ];
    let mut paths = Vec::new();
    for (name, svg) in charts {
        let p = dir.join(name);
        std::fs::write(&p, svg)?;
        paths.push(p);
    }
    Ok(paths)
}
