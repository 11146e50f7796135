//! Deterministic packet-level simulator of a dumbbell with a single FIFO
//! drop-tail bottleneck.
//!
//! Senders are bulk BBR flows. Data packets cross the bottleneck, then the
//! forward propagation delay; ACKs return over a delay-only reverse path.
//! Path delays are stamped on each packet at send time, so a latency change
//! only affects packets transmitted after it.

mod link;
mod time;
mod trace;

pub use link::{bottleneck_transit, LinkSpec, QueueState, Transit};
pub use time::SimTime;
pub use trace::{TraceLog, TraceRow};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use log::warn;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bbr::{BbrModel, BbrSnapshot, RoundEvents, DEFAULT_BTLBW_WINDOW_ROUNDS, DEFAULT_RTPROP_WINDOW_US, MSS};

pub type FlowId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("event at {at} is in the past (now {now})")]
    EventInPast { at: SimTime, now: SimTime },
    #[error("run target {target} is before the current time {now}")]
    RunBackwards { target: SimTime, now: SimTime },
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("invalid link: {0}")]
    InvalidLink(String),
    #[error("invalid bandwidth {0} bit/s")]
    InvalidBandwidth(u64),
    #[error("invalid window: {0}")]
    InvalidWindow(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SetBandwidth { bps: u64 },
    /// Round-trip propagation latency; each direction gets half.
    SetLatency { rtt_us: u64 },
    FlowJoin { flow: FlowId },
    FlowLeave { flow: FlowId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkEvent {
    pub at: SimTime,
    pub kind: EventKind,
}

impl NetworkEvent {
    pub fn new(at: SimTime, kind: EventKind) -> Self {
        Self { at, kind }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub flow_id: FlowId,
    pub seq: u64,
    pub size: u64,
    pub sent_at: SimTime,
    /// When the sender learned of the delivery (ACK arrival).
    pub delivered_at: Option<SimTime>,
    fwd_delay_us: u64,
    rev_delay_us: u64,
    // delivery-rate snapshot taken at send time
    delivered: u64,
    delivered_time: SimTime,
    first_sent_time: SimTime,
}

/// Per-flow statistics over a trailing window, as a monitor would read them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub flow_id: FlowId,
    pub delivery_rate_bps: f64,
    pub srtt_us: f64,
    pub min_rtt_observed_us: u64,
    pub loss_rate: f64,
    pub cwnd_bytes: u64,
    pub pacing_rate_bps: f64,
    pub sample_window_us: u64,
    /// No packet was acknowledged inside the window.
    pub no_data: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FlowAccounting {
    pub bytes_sent: u64,
    pub bytes_delivered: u64,
    pub bytes_dropped: u64,
    pub bytes_in_flight: u64,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub seed: u64,
    pub link: LinkSpec,
    /// Period of trace samples; `None` disables tracing.
    pub sample_interval_us: Option<u64>,
    /// How much per-flow history is kept for windowed statistics.
    pub history_us: u64,
}

impl SimConfig {
    pub fn new(seed: u64, link: LinkSpec) -> Self {
        Self {
            seed,
            link,
            sample_interval_us: None,
            history_us: 5_000_000,
        }
    }

    pub fn with_sampling(mut self, interval_us: u64) -> Self {
        self.sample_interval_us = Some(interval_us);
        self
    }
}

#[derive(Debug, Clone)]
enum Event {
    Network(EventKind),
    SendTimer { flow: FlowId, generation: u64 },
    Departure(Packet),
    Delivery(Packet),
    Ack(Packet),
    LossNotice(Packet),
    Sample,
}

struct Scheduled {
    at: SimTime,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.seq == other.seq
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // BinaryHeap is a max-heap: earliest (time, insertion) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
enum History {
    Sent,
    Acked { bytes: u64, rtt_us: u64 },
    Lost,
}

struct Flow {
    active: bool,
    bbr: BbrModel,
    next_seq: u64,
    acct: FlowAccounting,
    next_send_at: SimTime,
    timer: Option<(SimTime, u64)>,
    timer_generation: u64,
    // delivery-rate estimator state
    delivered: u64,
    delivered_time: SimTime,
    first_sent_time: SimTime,
    next_round_delivered: u64,
    round_count: u64,
    lost_since_ack: bool,
    history: VecDeque<(SimTime, History)>,
    sends_over_cwnd: u64,
}

impl Flow {
    fn new(seed: u64, windows: (u64, u64)) -> Self {
        let mut bbr = BbrModel::new(seed);
        bbr.set_windows_us(windows.0, windows.1).expect("group windows are validated on write");
        Self {
            active: true,
            bbr,
            next_seq: 0,
            acct: FlowAccounting::default(),
            next_send_at: SimTime::ZERO,
            timer: None,
            timer_generation: 0,
            delivered: 0,
            delivered_time: SimTime::ZERO,
            first_sent_time: SimTime::ZERO,
            next_round_delivered: 0,
            round_count: 0,
            lost_since_ack: false,
            history: VecDeque::new(),
            sends_over_cwnd: 0,
        }
    }
}

pub struct Simulator {
    cfg: SimConfig,
    now: SimTime,
    link: LinkSpec,
    queue: QueueState,
    events: BinaryHeap<Scheduled>,
    next_event_seq: u64,
    flows: BTreeMap<FlowId, Flow>,
    rng: ChaCha8Rng,
    /// Windows by flow group; flow `f` belongs to group `f % len`.
    group_windows: Vec<(u64, u64)>,
    packets_sent: u64,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.link.validate()?;
        if cfg.sample_interval_us == Some(0) {
            return Err(SimError::InvalidLink("sample interval must be positive".into()));
        }
        let mut sim = Self {
            now: SimTime::ZERO,
            link: cfg.link,
            queue: QueueState::default(),
            events: BinaryHeap::new(),
            next_event_seq: 0,
            flows: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            group_windows: vec![(DEFAULT_RTPROP_WINDOW_US, DEFAULT_BTLBW_WINDOW_ROUNDS)],
            packets_sent: 0,
            cfg,
        };
        if let Some(interval) = sim.cfg.sample_interval_us {
            sim.push(SimTime(interval), Event::Sample);
        }
        Ok(sim)
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn link(&self) -> &LinkSpec {
        &self.link
    }

    pub fn queue(&self) -> QueueState {
        self.queue
    }

    pub fn packets_sent(&self) -> u64 {
        self.packets_sent
    }

    /// Ground-truth minimum RTT of a full-size packet on the current path.
    pub fn true_rtprop_us(&self) -> u64 {
        self.link.base_rtt_us()
    }

    pub fn active_flows(&self) -> Vec<FlowId> {
        self.flows.iter().filter(|(_, f)| f.active).map(|(&id, _)| id).collect()
    }

    pub fn bbr(&self, flow: FlowId) -> Result<&BbrModel, SimError> {
        self.flows.get(&flow).map(|f| &f.bbr).ok_or(SimError::UnknownFlow(flow))
    }

    pub fn accounting(&self, flow: FlowId) -> Result<FlowAccounting, SimError> {
        self.flows.get(&flow).map(|f| f.acct).ok_or(SimError::UnknownFlow(flow))
    }

    /// Bytes of `flow` physically in the network (queue, links, ACK path, or
    /// awaiting loss notification). Linear in the number of pending events.
    pub fn physical_in_flight(&self, flow: FlowId) -> u64 {
        self.events
            .iter()
            .filter_map(|s| match &s.event {
                Event::Departure(p) | Event::Delivery(p) | Event::Ack(p) | Event::LossNotice(p) if p.flow_id == flow => {
                    Some(p.size)
                }
                _ => None,
            })
            .sum()
    }

    /// Number of transmissions that left in-flight data above the cwnd.
    pub fn sends_over_cwnd(&self, flow: FlowId) -> Result<u64, SimError> {
        self.flows.get(&flow).map(|f| f.sends_over_cwnd).ok_or(SimError::UnknownFlow(flow))
    }

    pub fn schedule(&mut self, event: NetworkEvent) -> Result<(), SimError> {
        if event.at < self.now {
            return Err(SimError::EventInPast { at: event.at, now: self.now });
        }
        match event.kind {
            EventKind::SetBandwidth { bps: 0 } => return Err(SimError::InvalidBandwidth(0)),
            _ => {}
        }
        self.push(event.at, Event::Network(event.kind));
        Ok(())
    }

    /// Sets the filter windows for flow group `group` out of `groups`,
    /// applying to current members and to flows that join later.
    pub fn set_group_windows(
        &mut self,
        groups: usize,
        group: usize,
        rt_window_us: u64,
        bw_window_rounds: u64,
    ) -> Result<(), SimError> {
        if groups == 0 || group >= groups {
            return Err(SimError::InvalidWindow(format!("group {group} of {groups}")));
        }
        if rt_window_us == 0 || bw_window_rounds == 0 {
            return Err(SimError::InvalidWindow(format!(
                "rt {rt_window_us} us, bw {bw_window_rounds} rounds"
            )));
        }
        if self.group_windows.len() != groups {
            let fill = self.group_windows[0];
            self.group_windows = vec![fill; groups];
        }
        self.group_windows[group] = (rt_window_us, bw_window_rounds);
        for (&id, flow) in self.flows.iter_mut() {
            if id as usize % groups == group {
                flow.bbr
                    .set_windows_us(rt_window_us, bw_window_rounds)
                    .map_err(|e| SimError::InvalidWindow(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Current (rt window us, bw window rounds) of `group`.
    pub fn group_windows(&self, group: usize) -> (u64, u64) {
        self.group_windows[group % self.group_windows.len()]
    }

    fn windows_for(&self, flow: FlowId) -> (u64, u64) {
        self.group_windows[flow as usize % self.group_windows.len()]
    }

    fn push(&mut self, at: SimTime, event: Event) {
        let seq = self.next_event_seq;
        self.next_event_seq += 1;
        self.events.push(Scheduled { at, seq, event });
    }

    /// Processes every event with a timestamp up to and including `t_end`.
    pub fn run_until(&mut self, t_end: SimTime) -> Result<TraceLog, SimError> {
        if t_end < self.now {
            return Err(SimError::RunBackwards { target: t_end, now: self.now });
        }
        let mut trace = TraceLog::default();
        while self.events.peek().is_some_and(|s| s.at <= t_end) {
            let Scheduled { at, event, .. } = self.events.pop().expect("peeked");
            debug_assert!(at >= self.now);
            self.now = at;
            self.dispatch(event, &mut trace);
        }
        self.now = t_end;
        Ok(trace)
    }

    fn dispatch(&mut self, event: Event, trace: &mut TraceLog) {
        match event {
            Event::Network(kind) => self.apply_network_event(kind),
            Event::SendTimer { flow, generation } => {
                let fire = match self.flows.get_mut(&flow) {
                    Some(f) if f.timer.is_some_and(|(_, g)| g == generation) => {
                        f.timer = None;
                        true
                    }
                    _ => false,
                };
                if fire {
                    self.try_send(flow);
                }
            }
            Event::Departure(pkt) => {
                self.queue.backlog -= pkt.size;
                let at = self.now.plus_us(pkt.fwd_delay_us);
                self.push(at, Event::Delivery(pkt));
            }
            Event::Delivery(pkt) => {
                let at = self.now.plus_us(pkt.rev_delay_us);
                self.push(at, Event::Ack(pkt));
            }
            Event::Ack(pkt) => self.on_ack(pkt),
            Event::LossNotice(pkt) => self.on_loss(pkt),
            Event::Sample => {
                self.record_samples(trace);
                if let Some(interval) = self.cfg.sample_interval_us {
                    let next = self.now.plus_us(interval);
                    self.push(next, Event::Sample);
                }
            }
        }
    }

    fn apply_network_event(&mut self, kind: EventKind) {
        match kind {
            EventKind::SetBandwidth { bps } => self.link.capacity_bps = bps,
            EventKind::SetLatency { rtt_us } => self.link.prop_delay_us = rtt_us / 2,
            EventKind::FlowJoin { flow } => {
                let seed = self.rng.next_u64();
                let windows = self.windows_for(flow);
                match self.flows.get_mut(&flow) {
                    Some(f) if f.active => warn!("flow {flow} joined twice; ignoring"),
                    Some(f) => {
                        f.active = true;
                        f.bbr = BbrModel::new(seed);
                        f.bbr.set_windows_us(windows.0, windows.1).expect("validated");
                    }
                    None => {
                        self.flows.insert(flow, Flow::new(seed, windows));
                    }
                }
                self.try_send(flow);
            }
            EventKind::FlowLeave { flow } => match self.flows.get_mut(&flow) {
                Some(f) if f.active => {
                    f.active = false;
                    f.timer = None;
                }
                _ => warn!("flow {flow} is not active; leave ignored"),
            },
        }
    }

    fn try_send(&mut self, id: FlowId) {
        let now = self.now;
        let fwd = self.link.prop_delay_us;
        let rev = self.link.prop_delay_us;
        let Some(flow) = self.flows.get_mut(&id) else { return };
        if !flow.active {
            return;
        }
        if now < flow.next_send_at {
            if flow.timer.is_none() {
                flow.timer_generation += 1;
                let at = flow.next_send_at;
                flow.timer = Some((at, flow.timer_generation));
                let generation = flow.timer_generation;
                self.push(at, Event::SendTimer { flow: id, generation });
            }
            return;
        }
        let out = flow.bbr.control_outputs();
        if flow.acct.bytes_in_flight + MSS > out.cwnd {
            return;
        }
        if flow.acct.bytes_in_flight == 0 {
            flow.first_sent_time = now;
            flow.delivered_time = now;
        }
        let pkt = Packet {
            flow_id: id,
            seq: flow.next_seq,
            size: MSS,
            sent_at: now,
            delivered_at: None,
            fwd_delay_us: fwd,
            rev_delay_us: rev,
            delivered: flow.delivered,
            delivered_time: flow.delivered_time,
            first_sent_time: flow.first_sent_time,
        };
        flow.next_seq += MSS;
        flow.acct.bytes_sent += MSS;
        flow.acct.bytes_in_flight += MSS;
        if flow.acct.bytes_in_flight > out.cwnd {
            flow.sends_over_cwnd += 1;
        }
        flow.history.push_back((now, History::Sent));
        let gap = ((MSS * 8) as f64 * 1e6 / out.pacing_rate.max(1.0)).ceil().max(1.0);
        flow.next_send_at = now.plus_us(gap as u64);
        let at = flow.next_send_at;
        flow.timer_generation += 1;
        flow.timer = Some((at, flow.timer_generation));
        let generation = flow.timer_generation;
        self.packets_sent += 1;
        self.push(at, Event::SendTimer { flow: id, generation });

        match bottleneck_transit(pkt.size, now, &mut self.queue, &self.link) {
            Transit::Depart(at) => self.push(at, Event::Departure(pkt)),
            Transit::Drop => {
                let at = now.plus_us(pkt.fwd_delay_us + pkt.rev_delay_us);
                self.push(at, Event::LossNotice(pkt));
            }
        }
    }

    fn on_ack(&mut self, mut pkt: Packet) {
        let now = self.now;
        pkt.delivered_at = Some(now);
        let id = pkt.flow_id;
        let Some(flow) = self.flows.get_mut(&id) else { return };
        flow.acct.bytes_in_flight -= pkt.size;
        flow.acct.bytes_delivered += pkt.size;
        let rtt = now.since(pkt.sent_at);
        flow.history.push_back((now, History::Acked { bytes: pkt.size, rtt_us: rtt }));
        prune(&mut flow.history, now, self.cfg.history_us);

        flow.delivered += pkt.size;
        flow.delivered_time = now;
        let send_elapsed = pkt.sent_at.since(pkt.first_sent_time);
        let ack_elapsed = now.since(pkt.delivered_time);
        let interval = send_elapsed.max(ack_elapsed);
        if pkt.sent_at > flow.first_sent_time {
            flow.first_sent_time = pkt.sent_at;
        }
        let round_start = pkt.delivered >= flow.next_round_delivered;
        if round_start {
            flow.next_round_delivered = flow.delivered;
            flow.round_count += 1;
        }
        if !flow.active {
            return;
        }
        let min_rtt = flow.bbr.rtprop_us().unwrap_or(0);
        let bbr = &mut flow.bbr;
        bbr.on_rtt_sample(rtt as i64, now.as_micros()).expect("rtt includes serialization time");
        // Samples over less than one RTprop are not trustworthy.
        if interval > 0 && interval >= min_rtt {
            let rate = (flow.delivered - pkt.delivered) as f64 * 8.0 * 1e6 / interval as f64;
            bbr.on_delivery_sample(rate, flow.round_count).expect("rate is finite");
        }
        let events = RoundEvents {
            round: flow.round_count,
            round_start,
            lost: std::mem::take(&mut flow.lost_since_ack),
        };
        bbr.tick_state_machine(now.as_micros(), flow.acct.bytes_in_flight, events);
        self.try_send(id);
    }

    fn on_loss(&mut self, pkt: Packet) {
        let now = self.now;
        let Some(flow) = self.flows.get_mut(&pkt.flow_id) else { return };
        flow.acct.bytes_in_flight -= pkt.size;
        flow.acct.bytes_dropped += pkt.size;
        flow.lost_since_ack = true;
        flow.history.push_back((now, History::Lost));
        prune(&mut flow.history, now, self.cfg.history_us);
        self.try_send(pkt.flow_id);
    }

    /// Statistics of `flow` over the trailing `window_us`.
    pub fn sample_flow_stats(&self, flow: FlowId, window_us: u64) -> Result<FlowStats, SimError> {
        let f = self.flows.get(&flow).ok_or(SimError::UnknownFlow(flow))?;
        let window_us = window_us.max(1);
        let from = self.now.as_micros().saturating_sub(window_us);
        let mut bytes = 0u64;
        let mut sent = 0u64;
        let mut lost = 0u64;
        let mut srtt: Option<f64> = None;
        let mut min_rtt = u64::MAX;
        for &(t, h) in f.history.iter().rev() {
            if t.as_micros() <= from && from > 0 {
                break;
            }
            match h {
                History::Sent => sent += 1,
                History::Lost => lost += 1,
                History::Acked { .. } => {}
            }
        }
        // EWMA runs forward in time, so walk the window oldest first.
        let start = f.history.partition_point(|&(t, _)| t.as_micros() <= from && from > 0);
        for &(_, h) in f.history.range(start..) {
            if let History::Acked { bytes: b, rtt_us } = h {
                bytes += b;
                min_rtt = min_rtt.min(rtt_us);
                srtt = Some(match srtt {
                    None => rtt_us as f64,
                    Some(s) => 0.875 * s + 0.125 * rtt_us as f64,
                });
            }
        }
        let out = f.bbr.control_outputs();
        let no_data = srtt.is_none();
        Ok(FlowStats {
            flow_id: flow,
            delivery_rate_bps: bytes as f64 * 8.0 * 1e6 / window_us as f64,
            srtt_us: srtt.unwrap_or(0.0),
            min_rtt_observed_us: if no_data { 0 } else { min_rtt },
            loss_rate: if sent == 0 { 0.0 } else { (lost as f64 / sent as f64).min(1.0) },
            cwnd_bytes: if f.active { out.cwnd } else { 0 },
            pacing_rate_bps: if f.active { out.pacing_rate } else { 0.0 },
            sample_window_us: window_us,
            no_data,
        })
    }

    pub fn bbr_snapshot(&self, flow: FlowId) -> Result<BbrSnapshot, SimError> {
        Ok(self.bbr(flow)?.snapshot())
    }

    fn record_samples(&mut self, trace: &mut TraceLog) {
        let Some(interval) = self.cfg.sample_interval_us else { return };
        for id in self.active_flows() {
            let stats = self.sample_flow_stats(id, interval).expect("active flow exists");
            let bbr = self.flows[&id].bbr.snapshot();
            trace.rows.push(TraceRow {
                time_us: self.now.as_micros(),
                stats,
                bbr,
                queue_backlog_bytes: self.queue.backlog,
                true_rtprop_us: self.true_rtprop_us(),
                capacity_bps: self.link.capacity_bps,
            });
        }
    }
}

fn prune(history: &mut VecDeque<(SimTime, History)>, now: SimTime, keep_us: u64) {
    let horizon = now.as_micros().saturating_sub(keep_us);
    while history.front().is_some_and(|&(t, _)| t.as_micros() < horizon) {
        history.pop_front();
    }
}
