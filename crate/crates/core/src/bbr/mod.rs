//! BBR (v1) congestion control with runtime-settable filter windows.
//!
//! The model keeps the windowed-max bottleneck bandwidth estimate (BtlBw) and
//! the windowed-min round-trip propagation estimate (RTprop), and drives the
//! Startup / Drain / ProbeBW / ProbeRTT state machine with the canonical gain
//! constants. Only the two filter windows are meant to be changed at runtime.

mod filter;

pub use filter::{WindowedMaxFilter, WindowedMinFilter};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum segment size in bytes.
pub const MSS: u64 = 1500;

/// 2/ln(2): the smallest gain that doubles the sending rate every round.
pub const HIGH_GAIN: f64 = 2.885_390_081_777_927;

pub const PACING_GAIN_CYCLE: [f64; 8] = [1.25, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0];

pub const DEFAULT_RTPROP_WINDOW_US: u64 = 10_000_000;
pub const DEFAULT_BTLBW_WINDOW_ROUNDS: u64 = 8;

const PROBE_BW_CWND_GAIN: f64 = 2.0;
const MIN_CWND: u64 = 4 * MSS;
const INITIAL_CWND: u64 = 10 * MSS;
const FULL_BW_GROWTH: f64 = 1.25;
const FULL_BW_ROUNDS: u32 = 3;
const PROBE_RTT_DURATION_US: u64 = 200_000;
// Pacing reference used before any RTT sample exists.
const INITIAL_RTT_US: u64 = 1_000;

#[derive(Debug, Error, PartialEq)]
pub enum BbrError {
    #[error("rtt sample must be positive, got {0} us")]
    NonPositiveRtt(i64),
    #[error("delivery rate must be finite and non-negative, got {0}")]
    InvalidRate(f64),
    #[error("rtprop window must be a positive number of seconds, got {0}")]
    InvalidRtWindow(f64),
    #[error("btlbw window must be at least one round, got {0}")]
    InvalidBwWindow(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Startup,
    Drain,
    ProbeBw,
    ProbeRtt,
}

impl Phase {
    pub fn code(self) -> u8 {
        match self {
            Phase::Startup => 0,
            Phase::Drain => 1,
            Phase::ProbeBw => 2,
            Phase::ProbeRtt => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Startup => "startup",
            Phase::Drain => "drain",
            Phase::ProbeBw => "probe_bw",
            Phase::ProbeRtt => "probe_rtt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutputs {
    /// bits per second
    pub pacing_rate: f64,
    /// bytes
    pub cwnd: u64,
}

/// Round-trip bookkeeping handed over by the transport on every ACK.
#[derive(Debug, Clone, Copy, Default)]
pub struct RoundEvents {
    pub round: u64,
    pub round_start: bool,
    /// Set when losses were detected since the previous ACK.
    pub lost: bool,
}

/// Exported model variables, used for state tables and traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BbrSnapshot {
    pub btlbw_bps: f64,
    pub rtprop_us: u64,
    pub pacing_gain: f64,
    pub cwnd_gain: f64,
    pub phase: Phase,
    pub rt_window_us: u64,
    pub bw_window_rounds: u64,
}

#[derive(Debug, Clone)]
pub struct BbrModel {
    btlbw_filter: WindowedMaxFilter,
    rtprop_filter: WindowedMinFilter,
    btlbw: f64,
    rtprop_us: Option<u64>,
    rtprop_stamp: u64,
    round_count: u64,
    phase: Phase,
    pacing_gain: f64,
    cwnd_gain: f64,
    cycle_index: usize,
    cycle_stamp: u64,
    full_bw: f64,
    full_bw_count: u32,
    filled_pipe: bool,
    probe_rtt_done: Option<u64>,
    rng: ChaCha8Rng,
}

impl BbrModel {
    /// `seed` drives the random initial ProbeBW phase.
    pub fn new(seed: u64) -> Self {
        Self {
            btlbw_filter: WindowedMaxFilter::new(DEFAULT_BTLBW_WINDOW_ROUNDS),
            rtprop_filter: WindowedMinFilter::new(DEFAULT_RTPROP_WINDOW_US),
            btlbw: 0.0,
            rtprop_us: None,
            rtprop_stamp: 0,
            round_count: 0,
            phase: Phase::Startup,
            pacing_gain: HIGH_GAIN,
            cwnd_gain: HIGH_GAIN,
            cycle_index: 0,
            cycle_stamp: 0,
            full_bw: 0.0,
            full_bw_count: 0,
            filled_pipe: false,
            probe_rtt_done: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn btlbw(&self) -> f64 {
        self.btlbw
    }

    pub fn rtprop_us(&self) -> Option<u64> {
        self.rtprop_us
    }

    pub fn pacing_gain(&self) -> f64 {
        self.pacing_gain
    }

    pub fn cwnd_gain(&self) -> f64 {
        self.cwnd_gain
    }

    pub fn round_count(&self) -> u64 {
        self.round_count
    }

    pub fn cycle_index(&self) -> usize {
        self.cycle_index
    }

    pub fn filled_pipe(&self) -> bool {
        self.filled_pipe
    }

    /// Current (RTprop window in seconds, BtlBw window in rounds).
    pub fn windows(&self) -> (f64, u64) {
        (
            self.rtprop_filter.window_us() as f64 / 1e6,
            self.btlbw_filter.window(),
        )
    }

    pub fn rt_window_us(&self) -> u64 {
        self.rtprop_filter.window_us()
    }

    pub fn snapshot(&self) -> BbrSnapshot {
        BbrSnapshot {
            btlbw_bps: self.btlbw,
            rtprop_us: self.rtprop_us.unwrap_or(0),
            pacing_gain: self.pacing_gain,
            cwnd_gain: self.cwnd_gain,
            phase: self.phase,
            rt_window_us: self.rtprop_filter.window_us(),
            bw_window_rounds: self.btlbw_filter.window(),
        }
    }

    /// Updates both filter windows. Invalid values leave the previous
    /// configuration untouched.
    pub fn set_windows(&mut self, rt_window_s: f64, bw_window_rounds: u64) -> Result<(), BbrError> {
        let rt_us = seconds_to_us(rt_window_s).ok_or(BbrError::InvalidRtWindow(rt_window_s))?;
        self.set_windows_us(rt_us, bw_window_rounds)
    }

    pub fn set_windows_us(&mut self, rt_window_us: u64, bw_window_rounds: u64) -> Result<(), BbrError> {
        if rt_window_us == 0 {
            return Err(BbrError::InvalidRtWindow(0.0));
        }
        if bw_window_rounds == 0 {
            return Err(BbrError::InvalidBwWindow(bw_window_rounds));
        }
        self.rtprop_filter.set_window_us(rt_window_us);
        self.btlbw_filter.set_window(bw_window_rounds);
        Ok(())
    }

    pub fn on_rtt_sample(&mut self, rtt_us: i64, now_us: u64) -> Result<(), BbrError> {
        if rtt_us <= 0 {
            return Err(BbrError::NonPositiveRtt(rtt_us));
        }
        let rtt = rtt_us as u64;
        let previous = self.rtprop_filter.get(now_us);
        self.rtprop_filter.update(now_us, rtt);
        // The stamp only moves on a new minimum, or when the filter had emptied.
        if previous.is_none_or(|p| rtt < p) {
            self.rtprop_stamp = now_us;
        }
        self.rtprop_us = self.rtprop_filter.get(now_us);
        Ok(())
    }

    pub fn on_delivery_sample(&mut self, rate_bps: f64, round: u64) -> Result<(), BbrError> {
        if !rate_bps.is_finite() || rate_bps < 0.0 {
            return Err(BbrError::InvalidRate(rate_bps));
        }
        self.round_count = self.round_count.max(round);
        self.btlbw_filter.update(round, rate_bps);
        self.refresh_btlbw();
        Ok(())
    }

    fn refresh_btlbw(&mut self) {
        if let Some(bw) = self.btlbw_filter.get(self.round_count) {
            self.btlbw = bw;
        }
    }

    /// Bandwidth-delay product in bytes scaled by `gain`.
    pub fn bdp_bytes(&self, gain: f64) -> Option<u64> {
        let rtprop = self.rtprop_us?;
        if self.btlbw <= 0.0 {
            return None;
        }
        Some((gain * self.btlbw * rtprop as f64 / 8e6) as u64)
    }

    pub fn control_outputs(&self) -> ControlOutputs {
        let Some(bdp) = self.bdp_bytes(self.cwnd_gain) else {
            let rtt = self.rtprop_us.unwrap_or(INITIAL_RTT_US).max(1);
            return ControlOutputs {
                pacing_rate: HIGH_GAIN * (INITIAL_CWND * 8) as f64 * 1e6 / rtt as f64,
                cwnd: INITIAL_CWND,
            };
        };
        let cwnd = match self.phase {
            Phase::ProbeRtt => MIN_CWND,
            // Canonical startup never shrinks below the initial window.
            Phase::Startup => bdp.max(INITIAL_CWND),
            _ => bdp.max(MIN_CWND),
        };
        ControlOutputs {
            pacing_rate: self.pacing_gain * self.btlbw,
            cwnd,
        }
    }

    /// Runs the phase transitions for one ACK. Returns the new phase when it
    /// changed.
    pub fn tick_state_machine(&mut self, now_us: u64, inflight: u64, events: RoundEvents) -> Option<Phase> {
        let before = self.phase;
        self.round_count = self.round_count.max(events.round);
        self.refresh_btlbw();
        self.check_cycle_phase(now_us, inflight, events.lost);
        self.check_full_pipe(events.round_start);
        self.check_drain(now_us, inflight);
        self.check_probe_rtt(now_us, inflight);
        (self.phase != before).then_some(self.phase)
    }

    fn check_full_pipe(&mut self, round_start: bool) {
        if self.filled_pipe || !round_start {
            return;
        }
        if self.btlbw >= self.full_bw * FULL_BW_GROWTH {
            self.full_bw = self.btlbw;
            self.full_bw_count = 0;
            return;
        }
        self.full_bw_count += 1;
        if self.full_bw_count >= FULL_BW_ROUNDS {
            self.filled_pipe = true;
        }
    }

    fn check_drain(&mut self, now_us: u64, inflight: u64) {
        if self.phase == Phase::Startup && self.filled_pipe {
            self.phase = Phase::Drain;
            self.pacing_gain = 1.0 / HIGH_GAIN;
            self.cwnd_gain = HIGH_GAIN;
        }
        if self.phase == Phase::Drain && self.bdp_bytes(1.0).is_some_and(|bdp| inflight <= bdp) {
            self.enter_probe_bw(now_us);
        }
    }

    fn enter_probe_bw(&mut self, now_us: u64) {
        self.phase = Phase::ProbeBw;
        self.cwnd_gain = PROBE_BW_CWND_GAIN;
        // Random start phase, never the draining 0.75 phase.
        let len = PACING_GAIN_CYCLE.len();
        self.cycle_index = len - 1 - self.rng.random_range(0..len - 1);
        self.advance_cycle(now_us);
    }

    fn advance_cycle(&mut self, now_us: u64) {
        self.cycle_stamp = now_us;
        self.cycle_index = (self.cycle_index + 1) % PACING_GAIN_CYCLE.len();
        self.pacing_gain = PACING_GAIN_CYCLE[self.cycle_index];
    }

    fn check_cycle_phase(&mut self, now_us: u64, inflight: u64, lost: bool) {
        if self.phase != Phase::ProbeBw {
            return;
        }
        let rtprop = self.rtprop_us.unwrap_or(0);
        let full_length = now_us.saturating_sub(self.cycle_stamp) > rtprop;
        let next = if self.pacing_gain > 1.0 {
            full_length && (lost || self.bdp_bytes(self.pacing_gain).is_some_and(|t| inflight >= t))
        } else if self.pacing_gain < 1.0 {
            full_length || self.bdp_bytes(1.0).is_some_and(|t| inflight <= t)
        } else {
            full_length
        };
        if next {
            self.advance_cycle(now_us);
        }
    }

    fn check_probe_rtt(&mut self, now_us: u64, inflight: u64) {
        let expired = now_us.saturating_sub(self.rtprop_stamp) > self.rtprop_filter.window_us();
        if self.phase != Phase::ProbeRtt && expired && self.rtprop_us.is_some() {
            self.phase = Phase::ProbeRtt;
            self.pacing_gain = 1.0;
            self.cwnd_gain = 1.0;
            self.probe_rtt_done = None;
        }
        if self.phase != Phase::ProbeRtt {
            return;
        }
        match self.probe_rtt_done {
            None if inflight <= MIN_CWND => {
                let hold = PROBE_RTT_DURATION_US.max(self.rtprop_us.unwrap_or(0));
                self.probe_rtt_done = Some(now_us + hold);
            }
            Some(done) if now_us >= done => {
                self.rtprop_stamp = now_us;
                self.probe_rtt_done = None;
                if self.filled_pipe {
                    self.enter_probe_bw(now_us);
                } else {
                    self.phase = Phase::Startup;
                    self.pacing_gain = HIGH_GAIN;
                    self.cwnd_gain = HIGH_GAIN;
                }
            }
            _ => {}
        }
    }
}

/// Converts a positive, finite number of seconds to whole microseconds.
pub fn seconds_to_us(seconds: f64) -> Option<u64> {
    if !seconds.is_finite() || seconds <= 0.0 {
        return None;
    }
    let us = (seconds * 1e6).round();
    (us >= 1.0 && us < u64::MAX as f64).then_some(us as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn events(round: u64, round_start: bool) -> RoundEvents {
        RoundEvents {
            round,
            round_start,
            lost: false,
        }
    }

    #[test]
    fn fresh_model_is_in_startup() {
        let m = BbrModel::new(1);
        assert_eq!(m.phase(), Phase::Startup);
        assert!((m.pacing_gain() - 2.885).abs() < 1e-3);
        assert_eq!(m.windows(), (10.0, 8));
    }

    #[test]
    fn rtprop_stays_stale_until_old_minimum_expires() {
        let mut m = BbrModel::new(1);
        m.on_rtt_sample(40_000, 1_000_000).unwrap();
        for t in (2..=10).map(|s| s * 1_000_000) {
            m.on_rtt_sample(400_000, t).unwrap();
            assert_eq!(m.rtprop_us(), Some(40_000));
        }
        m.on_rtt_sample(400_000, 11_000_000).unwrap();
        assert_eq!(m.rtprop_us(), Some(400_000));
    }

    #[test]
    fn short_window_single_entry() {
        let mut m = BbrModel::new(1);
        m.set_windows(0.5, 8).unwrap();
        m.on_rtt_sample(40_000, 0).unwrap();
        m.on_rtt_sample(400_000, 1_000_000).unwrap();
        assert_eq!(m.rtprop_us(), Some(400_000));
    }

    #[test]
    fn rtprop_is_min_of_samples() {
        let mut m = BbrModel::new(1);
        for (i, rtt) in [40_000, 50_000, 45_000].into_iter().enumerate() {
            m.on_rtt_sample(rtt, i as u64 * 1000).unwrap();
        }
        assert_eq!(m.rtprop_us(), Some(40_000));
    }

    #[test]
    fn rejects_non_positive_rtt() {
        let mut m = BbrModel::new(1);
        assert_eq!(m.on_rtt_sample(0, 0), Err(BbrError::NonPositiveRtt(0)));
        assert_eq!(m.on_rtt_sample(-5, 0), Err(BbrError::NonPositiveRtt(-5)));
        assert_eq!(m.rtprop_us(), None);
    }

    #[test]
    fn btlbw_is_windowed_max() {
        let mut m = BbrModel::new(1);
        m.on_delivery_sample(10e6, 1).unwrap();
        m.on_delivery_sample(20e6, 2).unwrap();
        m.on_delivery_sample(5e6, 3).unwrap();
        assert_eq!(m.btlbw(), 20e6);
        m.set_windows(10.0, 1).unwrap();
        m.on_delivery_sample(5e6, 3).unwrap();
        assert_eq!(m.btlbw(), 5e6);
    }

    #[test]
    fn control_outputs_follow_gains() {
        let mut m = BbrModel::new(1);
        m.on_rtt_sample(40_000, 0).unwrap();
        m.on_delivery_sample(20e6, 1).unwrap();
        m.phase = Phase::ProbeBw;
        m.cwnd_gain = 2.0;
        m.pacing_gain = 1.25;
        let out = m.control_outputs();
        assert_eq!(m.bdp_bytes(1.0), Some(100_000));
        assert_eq!(out.cwnd, 200_000);
        assert!((out.pacing_rate - 25e6).abs() < 1e-6);
        m.pacing_gain = 0.75;
        assert!((m.control_outputs().pacing_rate - 15e6).abs() < 1e-6);
    }

    #[test]
    fn cwnd_floor_is_four_segments() {
        let mut m = BbrModel::new(1);
        m.on_rtt_sample(100, 0).unwrap();
        m.on_delivery_sample(1e3, 1).unwrap();
        m.phase = Phase::ProbeBw;
        m.cwnd_gain = 2.0;
        assert_eq!(m.control_outputs().cwnd, 4 * MSS);
    }

    #[test]
    fn startup_defaults_before_samples() {
        let m = BbrModel::new(1);
        let out = m.control_outputs();
        assert_eq!(out.cwnd, 10 * MSS);
        assert!(out.pacing_rate > 0.0);
    }

    #[test]
    fn invalid_windows_keep_previous() {
        let mut m = BbrModel::new(1);
        m.set_windows(2.0, 4).unwrap();
        assert!(m.set_windows(-1.0, 8).is_err());
        assert!(m.set_windows(f64::NAN, 8).is_err());
        assert!(m.set_windows(1.0, 0).is_err());
        assert_eq!(m.windows(), (2.0, 4));
    }

    #[test]
    fn plateau_moves_startup_to_drain() {
        // Oracle: the first round where three consecutive round starts saw
        // less than 25% growth over the last recorded baseline.
        let rates = [1e6, 2e6, 4e6, 8e6, 9e6, 9.5e6, 9.6e6, 9.6e6, 9.6e6];
        let mut baseline = 0.0;
        let mut count = 0;
        let mut expected_round = None;
        let mut running_max: f64 = 0.0;
        for (i, &r) in rates.iter().enumerate() {
            running_max = running_max.max(r);
            if running_max >= baseline * 1.25 {
                baseline = running_max;
                count = 0;
            } else {
                count += 1;
                if count >= 3 && expected_round.is_none() {
                    expected_round = Some(i as u64 + 1);
                }
            }
        }
        let expected_round = expected_round.unwrap();

        let mut m = BbrModel::new(1);
        m.on_rtt_sample(40_000, 0).unwrap();
        let mut drained_at = None;
        for (i, &r) in rates.iter().enumerate() {
            let round = i as u64 + 1;
            let now = round * 40_000;
            m.on_rtt_sample(40_000, now).unwrap();
            m.on_delivery_sample(r, round).unwrap();
            // large inflight keeps it in Drain once entered
            m.tick_state_machine(now, u64::MAX / 2, events(round, true));
            if m.phase() == Phase::Drain && drained_at.is_none() {
                drained_at = Some(round);
            }
        }
        assert_eq!(drained_at, Some(expected_round));
    }

    #[test]
    fn drain_exits_to_probe_bw_when_queue_empties() {
        let mut m = BbrModel::new(3);
        m.on_rtt_sample(40_000, 0).unwrap();
        m.on_delivery_sample(20e6, 1).unwrap();
        m.filled_pipe = true;
        m.tick_state_machine(1000, 1_000_000, events(1, false));
        assert_eq!(m.phase(), Phase::Drain);
        m.tick_state_machine(2000, 50_000, events(1, false));
        assert_eq!(m.phase(), Phase::ProbeBw);
        assert_eq!(m.cwnd_gain(), 2.0);
        assert_ne!(m.cycle_index(), 1, "never start in the 0.75 phase");
    }

    #[test]
    fn gain_cycle_mean_is_one() {
        assert_eq!(PACING_GAIN_CYCLE.iter().sum::<f64>(), 8.0);
    }

    #[test]
    fn stale_rtprop_triggers_probe_rtt() {
        let mut m = BbrModel::new(1);
        m.set_windows(2.0, 8).unwrap();
        m.on_rtt_sample(40_000, 0).unwrap();
        m.on_delivery_sample(20e6, 1).unwrap();
        m.filled_pipe = true;
        m.enter_probe_bw(0);
        let mut now = 0;
        while now < 2_000_000 {
            now += 100_000;
            m.on_rtt_sample(60_000, now).unwrap();
            m.tick_state_machine(now, 100_000, events(1, false));
            if now <= 2_000_000 {
                assert_eq!(m.phase(), Phase::ProbeBw, "at {now}");
            }
        }
        now += 100_000;
        m.on_rtt_sample(60_000, now).unwrap();
        m.tick_state_machine(now, 100_000, events(1, false));
        assert_eq!(m.phase(), Phase::ProbeRtt);
        assert_eq!(m.control_outputs().cwnd, 4 * MSS);

        // Holds for max(200 ms, RTprop) once inflight has drained.
        m.tick_state_machine(now, 4 * MSS, events(2, true));
        let start = now;
        now += 199_000;
        m.tick_state_machine(now, 4 * MSS, events(3, true));
        assert_eq!(m.phase(), Phase::ProbeRtt);
        now = start + 200_000;
        m.tick_state_machine(now, 4 * MSS, events(4, true));
        assert_eq!(m.phase(), Phase::ProbeBw);
    }

    #[test]
    fn identical_window_write_is_noop() {
        let run = |rewrite: bool| {
            let mut m = BbrModel::new(9);
            let mut out = Vec::new();
            for i in 1..200u64 {
                if rewrite && i % 10 == 0 {
                    m.set_windows(10.0, 8).unwrap();
                }
                let now = i * 10_000;
                m.on_rtt_sample(40_000 + (i % 7) as i64 * 1000, now).unwrap();
                m.on_delivery_sample(1e6 * (i % 13) as f64, i / 4).unwrap();
                m.tick_state_machine(now, 50_000, events(i / 4, i % 4 == 0));
                out.push((m.control_outputs().cwnd, m.phase()));
            }
            out
        };
        assert_eq!(run(false), run(true));
    }
}
