//! Length-prefixed binary frames exchanged between host and RL agents.
//!
//! ```text
//! frame  = len u32 | body                      (len = body length)
//! body   = version u8 | kind u8 | agent_id u32 | epoch u64 | payload_len u32 | payload
//! HELLO  = (empty)
//! PARAMS = rt_window_ms u32 | bw_window_rounds u32
//! ACK    = applied_at_us u64
//! ERROR  = code u16 | msg_len u32 | utf8
//! STATS  = time_us u64 | done u8 | rt_ms u32 | bw u32
//!          | n_rows u32 | n_cols u32 | rows f64[n_rows*n_cols] | flow_ids u32[n_rows]
//!          | ticks u32 | thr_sum f64 | err_sum f64 | err_count u64
//!          | n_pid u32 | pid (thr, rtt, latency, estimate) f64[4*n_pid]
//! ```
//! All integers big-endian; floats as IEEE-754 bit patterns.

use std::io::Read;

use thiserror::Error;

use crate::env::{FlowObservation, IntervalStats, PidSample, FEATURES};

pub const WIRE_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("length mismatch: declared {declared}, actual {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("frame of {0} bytes exceeds the limit")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Hello = 1,
    Stats = 2,
    Params = 3,
    Ack = 4,
    Error = 5,
}

impl Kind {
    fn from_u8(b: u8) -> Result<Self, WireError> {
        Ok(match b {
            1 => Kind::Hello,
            2 => Kind::Stats,
            3 => Kind::Params,
            4 => Kind::Ack,
            5 => Kind::Error,
            _ => return Err(WireError::UnknownKind(b)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsBody {
    pub time_us: u64,
    pub done: bool,
    /// Windows in force for the reporting host's flows.
    pub rt_window_ms: u32,
    pub bw_window_rounds: u32,
    /// Filtered, unnormalized rows in flow-id order.
    pub observations: Vec<FlowObservation>,
    pub interval: IntervalStats,
    pub pid: Vec<PidSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hello,
    Stats(StatsBody),
    Params { rt_window_ms: u32, bw_window_rounds: u32 },
    Ack { applied_at_us: u64 },
    Error { code: u16, message: String },
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Hello => Kind::Hello,
            Payload::Stats(_) => Kind::Stats,
            Payload::Params { .. } => Kind::Params,
            Payload::Ack { .. } => Kind::Ack,
            Payload::Error { .. } => Kind::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub agent_id: u32,
    pub epoch: u64,
    pub payload: Payload,
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_bits().to_be_bytes());
}

fn encode_payload(p: &Payload, b: &mut Vec<u8>) {
    match p {
        Payload::Hello => {}
        Payload::Params {
            rt_window_ms,
            bw_window_rounds,
        } => {
            b.extend_from_slice(&rt_window_ms.to_be_bytes());
            b.extend_from_slice(&bw_window_rounds.to_be_bytes());
        }
        Payload::Ack { applied_at_us } => b.extend_from_slice(&applied_at_us.to_be_bytes()),
        Payload::Error { code, message } => {
            b.extend_from_slice(&code.to_be_bytes());
            b.extend_from_slice(&(message.len() as u32).to_be_bytes());
            b.extend_from_slice(message.as_bytes());
        }
        Payload::Stats(s) => {
            b.extend_from_slice(&s.time_us.to_be_bytes());
            b.push(s.done as u8);
            b.extend_from_slice(&s.rt_window_ms.to_be_bytes());
            b.extend_from_slice(&s.bw_window_rounds.to_be_bytes());
            b.extend_from_slice(&(s.observations.len() as u32).to_be_bytes());
            b.extend_from_slice(&(FEATURES as u32).to_be_bytes());
            for o in &s.observations {
                for &v in &o.raw {
                    put_f64(b, v);
                }
            }
            for o in &s.observations {
                b.extend_from_slice(&o.flow_id.to_be_bytes());
            }
            b.extend_from_slice(&s.interval.ticks.to_be_bytes());
            put_f64(b, s.interval.throughput_sum_bps);
            put_f64(b, s.interval.error_sum_ms);
            b.extend_from_slice(&s.interval.error_count.to_be_bytes());
            b.extend_from_slice(&(s.pid.len() as u32).to_be_bytes());
            for p in &s.pid {
                for v in [p.throughput_bps, p.rtt_s, p.latency_s, p.latency_estimate_s] {
                    put_f64(b, v);
                }
            }
        }
    }
}

/// Serializes `msg` into a complete frame including the length prefix.
pub fn encode_msg(msg: &WireMessage) -> Vec<u8> {
    let mut payload = Vec::new();
    encode_payload(&msg.payload, &mut payload);
    let body_len = HEADER_LEN + payload.len();
    let mut b = Vec::with_capacity(4 + body_len);
    b.extend_from_slice(&(body_len as u32).to_be_bytes());
    b.push(WIRE_VERSION);
    b.push(msg.payload.kind() as u8);
    b.extend_from_slice(&msg.agent_id.to_be_bytes());
    b.extend_from_slice(&msg.epoch.to_be_bytes());
    b.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    b.extend_from_slice(&payload);
    b
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Malformed("payload shorter than its contents"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }

    /// Guards allocations against counts that cannot fit in the rest.
    fn count(&mut self, per_item: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(per_item) > self.buf.len() {
            return Err(WireError::Malformed("element count exceeds payload"));
        }
        Ok(n)
    }
}

fn decode_payload(kind: Kind, payload: &[u8]) -> Result<Payload, WireError> {
    let mut c = Cursor { buf: payload };
    let p = match kind {
        Kind::Hello => Payload::Hello,
        Kind::Params => Payload::Params {
            rt_window_ms: c.u32()?,
            bw_window_rounds: c.u32()?,
        },
        Kind::Ack => Payload::Ack {
            applied_at_us: c.u64()?,
        },
        Kind::Error => {
            let code = c.u16()?;
            let n = c.count(1)?;
            let message = std::str::from_utf8(c.take(n)?)
                .map_err(|_| WireError::Malformed("error text is not UTF-8"))?
                .to_string();
            Payload::Error { code, message }
        }
        Kind::Stats => {
            let time_us = c.u64()?;
            let done = match c.u8()? {
                0 => false,
                1 => true,
                _ => return Err(WireError::Malformed("done flag must be 0 or 1")),
            };
            let rt_window_ms = c.u32()?;
            let bw_window_rounds = c.u32()?;
            let n_rows = c.count(8 * FEATURES + 4)?;
            if c.u32()? as usize != FEATURES {
                return Err(WireError::Malformed("unexpected column count"));
            }
            let mut rows = Vec::with_capacity(n_rows);
            for _ in 0..n_rows {
                let mut raw = [0.0; FEATURES];
                for v in raw.iter_mut() {
                    *v = c.f64()?;
                }
                rows.push(raw);
            }
            let mut observations = Vec::with_capacity(n_rows);
            for raw in rows {
                observations.push(FlowObservation { flow_id: c.u32()?, raw });
            }
            let interval = IntervalStats {
                ticks: c.u32()?,
                throughput_sum_bps: c.f64()?,
                error_sum_ms: c.f64()?,
                error_count: c.u64()?,
            };
            let n_pid = c.count(32)?;
            let mut pid = Vec::with_capacity(n_pid);
            for _ in 0..n_pid {
                pid.push(PidSample {
                    throughput_bps: c.f64()?,
                    rtt_s: c.f64()?,
                    latency_s: c.f64()?,
                    latency_estimate_s: c.f64()?,
                });
            }
            Payload::Stats(StatsBody {
                time_us,
                done,
                rt_window_ms,
                bw_window_rounds,
                observations,
                interval,
                pid,
            })
        }
    };
    if !c.buf.is_empty() {
        return Err(WireError::LengthMismatch {
            declared: payload.len(),
            actual: payload.len() - c.buf.len(),
        });
    }
    Ok(p)
}

/// Decodes exactly one complete frame; any trailing byte is an error.
pub fn decode_msg(frame: &[u8]) -> Result<WireMessage, WireError> {
    if frame.len() < 4 {
        return Err(WireError::Truncated {
            needed: 4,
            available: frame.len(),
        });
    }
    let len = u32::from_be_bytes(frame[..4].try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let body = &frame[4..];
    if body.len() < len {
        return Err(WireError::Truncated {
            needed: len,
            available: body.len(),
        });
    }
    if body.len() > len {
        return Err(WireError::LengthMismatch {
            declared: len,
            actual: body.len(),
        });
    }
    if len < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            available: len,
        });
    }
    if body[0] != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(body[0]));
    }
    let kind = Kind::from_u8(body[1])?;
    let agent_id = u32::from_be_bytes(body[2..6].try_into().expect("4 bytes"));
    let epoch = u64::from_be_bytes(body[6..14].try_into().expect("8 bytes"));
    let payload_len = u32::from_be_bytes(body[14..18].try_into().expect("4 bytes")) as usize;
    if HEADER_LEN + payload_len != len {
        return Err(WireError::LengthMismatch {
            declared: payload_len,
            actual: len - HEADER_LEN,
        });
    }
    Ok(WireMessage {
        agent_id,
        epoch,
        payload: decode_payload(kind, &body[HEADER_LEN..])?,
    })
}

/// Reads one frame (prefix included) from a byte stream.
pub fn read_frame<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut prefix = [0u8; 4];
    r.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            WireError::TooLarge(len),
        ));
    }
    let mut frame = vec![0u8; 4 + len];
    frame[..4].copy_from_slice(&prefix);
    r.read_exact(&mut frame[4..])?;
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_msg(n: usize) -> WireMessage {
        let observations = (0..n)
            .map(|i| FlowObservation {
                flow_id: i as u32 * 3,
                raw: [i as f64 + 0.5; FEATURES],
            })
            .collect();
        WireMessage {
            agent_id: 7,
            epoch: 42,
            payload: Payload::Stats(StatsBody {
                time_us: 2_000_000,
                done: false,
                rt_window_ms: 10_000,
                bw_window_rounds: 8,
                observations,
                interval: IntervalStats {
                    ticks: 20,
                    throughput_sum_bps: 1e8,
                    error_sum_ms: 3.5,
                    error_count: 60,
                },
                pid: vec![PidSample {
                    throughput_bps: 5e6,
                    rtt_s: 0.04,
                    latency_s: 0.04,
                    latency_estimate_s: 0.041,
                }],
            }),
        }
    }

    #[test]
    fn stats_round_trip() {
        let m = stats_msg(3);
        assert_eq!(decode_msg(&encode_msg(&m)).unwrap(), m);
    }

    #[test]
    fn cut_frame_is_truncated() {
        let f = encode_msg(&stats_msg(3));
        let err = decode_msg(&f[..f.len() - 10]).unwrap_err();
        assert!(matches!(err, WireError::Truncated { .. }));
        assert!(err.to_string().starts_with("truncated"));
    }

    #[test]
    fn bad_version() {
        let mut f = encode_msg(&stats_msg(1));
        f[4] = 99;
        let err = decode_msg(&f).unwrap_err();
        assert_eq!(err, WireError::UnsupportedVersion(99));
        assert_eq!(err.to_string(), "unsupported version 99");
    }

    #[test]
    fn payload_length_checked() {
        let mut f = encode_msg(&WireMessage {
            agent_id: 1,
            epoch: 1,
            payload: Payload::Params {
                rt_window_ms: 500,
                bw_window_rounds: 2,
            },
        });
        f[21] += 1;
        assert!(matches!(decode_msg(&f), Err(WireError::LengthMismatch { .. })));
    }

    #[test]
    fn stream_read() {
        let a = encode_msg(&stats_msg(2));
        let b = encode_msg(&WireMessage {
            agent_id: 0,
            epoch: 0,
            payload: Payload::Hello,
        });
        let joined = [a.clone(), b.clone()].concat();
        let mut r = &joined[..];
        assert_eq!(read_frame(&mut r).unwrap(), a);
        assert_eq!(read_frame(&mut r).unwrap(), b);
        assert!(read_frame(&mut r).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        -1e12f64..1e12
    }

    fn arb_payload() -> impl Strategy<Value = Payload> {
        let obs = (any::<u32>(), prop::array::uniform9(finite()))
            .prop_map(|(flow_id, raw)| FlowObservation { flow_id, raw });
        let pid = prop::array::uniform4(finite()).prop_map(|a| PidSample {
            throughput_bps: a[0],
            rtt_s: a[1],
            latency_s: a[2],
            latency_estimate_s: a[3],
        });
        let stats = (
            any::<u64>(),
            any::<bool>(),
            any::<u32>(),
            any::<u32>(),
            prop::collection::vec(obs, 0..10),
            (any::<u32>(), finite(), finite(), any::<u64>()),
            prop::collection::vec(pid, 0..25),
        )
            .prop_map(|(time_us, done, rt, bw, observations, (t, a, b, c), pid)| {
                Payload::Stats(StatsBody {
                    time_us,
                    done,
                    rt_window_ms: rt,
                    bw_window_rounds: bw,
                    observations,
                    interval: IntervalStats {
                        ticks: t,
                        throughput_sum_bps: a,
                        error_sum_ms: b,
                        error_count: c,
                    },
                    pid,
                })
            });
        prop_oneof![
            Just(Payload::Hello),
            (any::<u32>(), any::<u32>()).prop_map(|(rt_window_ms, bw_window_rounds)| Payload::Params {
                rt_window_ms,
                bw_window_rounds
            }),
            any::<u64>().prop_map(|applied_at_us| Payload::Ack { applied_at_us }),
            (any::<u16>(), ".{0,40}").prop_map(|(code, message)| Payload::Error { code, message }),
            stats,
        ]
    }

    pub(crate) fn arb_msg() -> impl Strategy<Value = WireMessage> {
        (any::<u32>(), any::<u64>(), arb_payload()).prop_map(|(agent_id, epoch, payload)| WireMessage {
            agent_id,
            epoch,
            payload,
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn round_trip(m in arb_msg()) {
            prop_assert_eq!(decode_msg(&encode_msg(&m)).unwrap(), m);
        }

        #[test]
        fn mutations_rejected(m in arb_msg(), cut in any::<prop::sample::Index>(), delta in 1u32..1000, v in 2u8..=255) {
            let f = encode_msg(&m);
            let n = cut.index(f.len());
            prop_assert!(decode_msg(&f[..n]).is_err());
            let mut bad = f.clone();
            bad[4] = v;
            prop_assert_eq!(decode_msg(&bad), Err(WireError::UnsupportedVersion(v)));
            for grow in [true, false] {
                let mut bad = f.clone();
                let len = u32::from_be_bytes(bad[..4].try_into().unwrap());
                let new = if grow { len.wrapping_add(delta) } else { len.wrapping_sub(delta) };
                bad[..4].copy_from_slice(&new.to_be_bytes());
                prop_assert!(decode_msg(&bad).is_err());
                let mut bad = f.clone();
                let pl = u32::from_be_bytes(bad[18..22].try_into().unwrap());
                let new = if grow { pl.wrapping_add(delta) } else { pl.wrapping_sub(delta) };
                bad[18..22].copy_from_slice(&new.to_be_bytes());
                prop_assert!(decode_msg(&bad).is_err());
            }
        }
    }
}
