use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::{Deserialize, Serialize};

use super::wire::{decode_msg, encode_msg, read_frame, WireMessage};
use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportKind {
    #[default]
    Mem,
    Tcp,
}

/// FIFO, frame-oriented duplex link.
pub trait Transport: Send {
    fn send(&mut self, msg: &WireMessage) -> Result<(), AgentError>;
    fn recv(&mut self) -> Result<WireMessage, AgentError>;
}

/// In-process link carrying encoded frames over channels.
pub struct MemTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

pub fn mem_pair() -> (MemTransport, MemTransport) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (MemTransport { tx: a_tx, rx: a_rx }, MemTransport { tx: b_tx, rx: b_rx })
}

impl Transport for MemTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<(), AgentError> {
        self.tx.send(encode_msg(msg)).map_err(|_| AgentError::Disconnected)
    }

    fn recv(&mut self) -> Result<WireMessage, AgentError> {
        let frame = self.rx.recv().map_err(|_| AgentError::Disconnected)?;
        Ok(decode_msg(&frame)?)
    }
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, AgentError> {
        Self::from_stream(TcpStream::connect(addr)?)
    }

    pub fn from_stream(stream: TcpStream) -> Result<Self, AgentError> {
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &WireMessage) -> Result<(), AgentError> {
        self.stream.write_all(&encode_msg(msg))?;
        Ok(())
    }

    fn recv(&mut self) -> Result<WireMessage, AgentError> {
        match read_frame(&mut self.stream) {
            Ok(frame) => Ok(decode_msg(&frame)?),
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(AgentError::Disconnected),
            Err(e) => Err(e.into()),
        }
    }
}
