//! BBR filter-window tuning with PPO on a packet-level bottleneck simulator.

pub mod agents;
pub mod bbr;
pub mod env;
pub mod harness;
pub mod netsim;
pub mod rl;
