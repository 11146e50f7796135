use std::io;

use serde::{Deserialize, Serialize};

use super::FlowStats;
use crate::bbr::{BbrSnapshot, Phase};

/// One periodic sample of a flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub time_us: u64,
    pub stats: FlowStats,
    pub bbr: BbrSnapshot,
    pub queue_backlog_bytes: u64,
    pub true_rtprop_us: u64,
    pub capacity_bps: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceLog {
    pub rows: Vec<TraceRow>,
}

// Flat CSV form: the eight base columns first, then model and ground-truth
// extensions.
#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    time_us: u64,
    flow_id: u32,
    delivery_rate_bps: f64,
    srtt_us: f64,
    loss_rate: f64,
    cwnd_bytes: u64,
    pacing_rate_bps: f64,
    queue_backlog_bytes: u64,
    btlbw_bps: f64,
    rtprop_us: u64,
    pacing_gain: f64,
    cwnd_gain: f64,
    phase: String,
    rt_window_us: u64,
    bw_window_rounds: u64,
    true_rtprop_us: u64,
    capacity_bps: u64,
    min_rtt_us: u64,
    no_data: bool,
}

fn parse_phase(s: &str) -> Option<Phase> {
    [Phase::Startup, Phase::Drain, Phase::ProbeBw, Phase::ProbeRtt]
        .into_iter()
        .find(|p| p.name() == s)
}

impl TraceLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: TraceLog) {
        self.rows.extend(other.rows);
    }

    pub fn flow(&self, flow: u32) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter().filter(move |r| r.stats.flow_id == flow)
    }

    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.rows.is_empty() {
            // header only
            w.write_record([
                "time_us", "flow_id", "delivery_rate_bps", "srtt_us", "loss_rate", "cwnd_bytes",
                "pacing_rate_bps", "queue_backlog_bytes", "btlbw_bps", "rtprop_us", "pacing_gain",
                "cwnd_gain", "phase", "rt_window_us", "bw_window_rounds", "true_rtprop_us",
                "capacity_bps", "min_rtt_us", "no_data",
            ])?;
        }
        for r in &self.rows {
            w.serialize(CsvRow {
                time_us: r.time_us,
                flow_id: r.stats.flow_id,
                delivery_rate_bps: r.stats.delivery_rate_bps,
                srtt_us: r.stats.srtt_us,
                loss_rate: r.stats.loss_rate,
                cwnd_bytes: r.stats.cwnd_bytes,
                pacing_rate_bps: r.stats.pacing_rate_bps,
                queue_backlog_bytes: r.queue_backlog_bytes,
                btlbw_bps: r.bbr.btlbw_bps,
                rtprop_us: r.bbr.rtprop_us,
                pacing_gain: r.bbr.pacing_gain,
                cwnd_gain: r.bbr.cwnd_gain,
                phase: r.bbr.phase.name().to_string(),
                rt_window_us: r.bbr.rt_window_us,
                bw_window_rounds: r.bbr.bw_window_rounds,
                true_rtprop_us: r.true_rtprop_us,
                capacity_bps: r.capacity_bps,
                min_rtt_us: r.stats.min_rtt_observed_us,
                no_data: r.stats.no_data,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read_csv<R: io::Read>(input: R) -> csv::Result<TraceLog> {
        let mut rd = csv::Reader::from_reader(input);
        let mut rows = Vec::new();
        for rec in rd.deserialize() {
            let c: CsvRow = rec?;
            let phase = parse_phase(&c.phase).ok_or_else(|| {
                csv::Error::from(io::Error::new(io::ErrorKind::InvalidData, format!("unknown phase {}", c.phase)))
            })?;
            rows.push(TraceRow {
                time_us: c.time_us,
                stats: FlowStats {
                    flow_id: c.flow_id,
                    delivery_rate_bps: c.delivery_rate_bps,
                    srtt_us: c.srtt_us,
                    min_rtt_observed_us: c.min_rtt_us,
                    loss_rate: c.loss_rate,
                    cwnd_bytes: c.cwnd_bytes,
                    pacing_rate_bps: c.pacing_rate_bps,
                    sample_window_us: 0,
                    no_data: c.no_data,
                },
                bbr: BbrSnapshot {
                    btlbw_bps: c.btlbw_bps,
                    rtprop_us: c.rtprop_us,
                    pacing_gain: c.pacing_gain,
                    cwnd_gain: c.cwnd_gain,
                    phase,
                    rt_window_us: c.rt_window_us,
                    bw_window_rounds: c.bw_window_rounds,
                },
                queue_backlog_bytes: c.queue_backlog_bytes,
                true_rtprop_us: c.true_rtprop_us,
                capacity_bps: c.capacity_bps,
            });
        }
        Ok(TraceLog { rows })
    }
}
