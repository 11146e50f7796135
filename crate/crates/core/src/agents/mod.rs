//! Host agents, the wire protocol between hosts and RL agents, and
//! multi-agent coordination.

pub mod coop;
pub mod host;
pub mod remote;
pub mod robust;
pub mod transport;
pub mod wire;

pub use coop::{consensus_penalty, pool_samples, share_merge, CoopConfig, CoopTrainer, NeighborSet, Topology};
pub use host::{HostAgent, HostAgentConfig, HostRuntime};
pub use remote::RemoteEnv;
pub use robust::{Monitor, RobustnessConfig};
pub use transport::{mem_pair, MemTransport, TcpTransport, Transport, TransportKind};
pub use wire::{decode_msg, encode_msg, Kind, Payload, StatsBody, WireError, WireMessage};

use thiserror::Error;

use crate::env::EnvError;
use crate::rl::RlError;

/// ERROR payload codes.
pub const ERR_BAD_PARAMS: u16 = 1;
pub const ERR_ROUND_ABORTED: u16 = 2;
pub const ERR_PROTOCOL: u16 = 3;
pub const ERR_RUNTIME: u16 = 4;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}
