use serde::{Deserialize, Serialize};

use super::{SimError, SimTime};
use crate::bbr::MSS;

/// Bottleneck link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub capacity_bps: u64,
    /// One-way propagation delay; the round trip is twice this.
    pub prop_delay_us: u64,
    pub buffer_bytes: u64,
}

impl LinkSpec {
    /// A link whose buffer holds two bandwidth-delay products.
    pub fn with_bdp_buffer(capacity_bps: u64, rtt_us: u64, bdp_multiple: f64) -> Self {
        let bdp = capacity_bps as f64 / 8.0 * rtt_us as f64 / 1e6;
        Self {
            capacity_bps,
            prop_delay_us: rtt_us / 2,
            buffer_bytes: ((bdp * bdp_multiple) as u64).max(MSS),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.capacity_bps == 0 {
            return Err(SimError::InvalidLink("capacity must be positive".into()));
        }
        if self.buffer_bytes < MSS {
            return Err(SimError::InvalidLink(format!(
                "buffer of {} bytes cannot hold one {MSS}-byte packet",
                self.buffer_bytes
            )));
        }
        Ok(())
    }

    pub fn rtt_us(&self) -> u64 {
        2 * self.prop_delay_us
    }

    /// Serialization time of `bytes` at the link rate, rounded up.
    pub fn tx_time_us(&self, bytes: u64) -> u64 {
        tx_time_us(bytes, self.capacity_bps)
    }

    /// Smallest possible RTT for a full-size packet on an idle path.
    pub fn base_rtt_us(&self) -> u64 {
        self.rtt_us() + self.tx_time_us(MSS)
    }
}

pub(crate) fn tx_time_us(bytes: u64, capacity_bps: u64) -> u64 {
    (bytes * 8 * 1_000_000).div_ceil(capacity_bps).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct QueueState {
    pub backlog: u64,
    pub drops: u64,
    /// Time at which the last admitted byte leaves the link.
    pub head_departure: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transit {
    Depart(SimTime),
    Drop,
}

/// FIFO drop-tail admission. On success the packet's departure time is
/// returned and the queue state updated; otherwise a drop is recorded.
pub fn bottleneck_transit(size: u64, now: SimTime, q: &mut QueueState, link: &LinkSpec) -> Transit {
    if q.backlog + size > link.buffer_bytes {
        q.drops += 1;
        return Transit::Drop;
    }
    let start = now.max(q.head_departure);
    let departure = start.plus_us(link.tx_time_us(size));
    q.backlog += size;
    q.head_departure = departure;
    Transit::Depart(departure)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link() -> LinkSpec {
        LinkSpec {
            capacity_bps: 20_000_000,
            prop_delay_us: 20_000,
            buffer_bytes: 200_000,
        }
    }

    #[test]
    fn empty_queue_service_time() {
        let mut q = QueueState::default();
        let now = SimTime::from_secs(1);
        assert_eq!(
            bottleneck_transit(1500, now, &mut q, &link()),
            Transit::Depart(now.plus_us(600))
        );
        assert_eq!(q.backlog, 1500);
    }

    #[test]
    fn full_buffer_drops() {
        let mut q = QueueState {
            backlog: 200_000,
            ..Default::default()
        };
        assert_eq!(bottleneck_transit(1500, SimTime::ZERO, &mut q, &link()), Transit::Drop);
        assert_eq!(q.drops, 1);
        assert_eq!(q.backlog, 200_000);
    }

    #[test]
    fn backlog_delay() {
        // 100 KB queued at 20 Mbps is 40 ms of queueing.
        let l = link();
        let now = SimTime::ZERO;
        let mut q = QueueState {
            backlog: 100_000,
            drops: 0,
            head_departure: now.plus_us(l.tx_time_us(100_000)),
        };
        match bottleneck_transit(1500, now, &mut q, &l) {
            Transit::Depart(t) => assert_eq!(t.as_micros(), 40_000 + 600),
            Transit::Drop => panic!("unexpected drop"),
        }
    }

    #[test]
    fn bdp_buffer() {
        let l = LinkSpec::with_bdp_buffer(20_000_000, 40_000, 2.0);
        assert_eq!(l.buffer_bytes, 200_000);
        assert_eq!(l.prop_delay_us, 20_000);
        assert!(l.validate().is_ok());
        let bad = LinkSpec { buffer_bytes: 100, ..l };
        assert!(bad.validate().is_err());
    }
}
