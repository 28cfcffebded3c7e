//! Edge and camera-node brokers over a length-prefixed binary RPC.
//!
//! The camera-node broker ([`cam::CamBroker`]) accepts a publisher's frame
//! stream into its local in-memory log, runs the latency controller, and
//! transfers quality-adjusted frames upstream on demand. The edge broker
//! ([`edge::EdgeBroker`]) registers cameras, holds one replica log per
//! camera, and serves subscribers with at-most-once, ascending-timestamp
//! delivery. Fault detection uses RPC timeouts only; a restarted edge
//! broker first recovers its replica logs from disk.

pub mod cam;
pub mod client;
pub mod config;
pub mod edge;
pub mod messages;
pub mod wire;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error(transparent)]
    Wire(#[from] wire::WireError),
    #[error("authentication failed")]
    AuthFailed,
    #[error("unknown camera {0}")]
    UnknownCamera(String),
    #[error("camera {0} is already registered")]
    DuplicateCamera(String),
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
    #[error("gave up after {attempts} connection attempts")]
    GaveUp { attempts: u32 },
    #[error("peer reported error {code}: {message}")]
    Remote { code: u16, message: String },
    #[error("unexpected message {0:?}")]
    Unexpected(wire::MsgType),
    #[error(transparent)]
    Log(#[from] framebus_core::memlog::LogError),
    #[error(transparent)]
    Codec(#[from] framebus_core::codec::CodecError),
    #[error(transparent)]
    Controller(#[from] framebus_core::controller::ControllerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BrokerError {
    /// True when the failure is a liveness timeout (the peer may be dead).
    pub fn is_timeout(&self) -> bool {
        matches!(self, BrokerError::Wire(wire::WireError::Timeout))
    }
}
