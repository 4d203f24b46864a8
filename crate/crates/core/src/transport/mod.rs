//! Byte transport between edge and cloud: a virtual-time simulated link and
//! real TCP streams, both keeping a per-direction [`TransferLedger`].

mod ledger;
mod sim;
mod tcp;

use thiserror::Error;

pub use ledger::{Direction, TransferEvent, TransferLedger};
pub use sim::{Delivery, SimLink};
pub use tcp::{Endpoint, FrameReader, FrameWriter, TcpConnection};

use crate::codec::CodecError;

/// Virtual time, nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

pub fn nanos_from_secs(s: f64) -> Nanos {
    (s * NANOS_PER_SEC).round() as Nanos
}

pub fn secs(n: Nanos) -> f64 {
    n as f64 / NANOS_PER_SEC
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkParams {
    pub bandwidth_bytes_per_s: f64,
    pub rtt_ns: Nanos,
    #[serde(default)]
    pub jitter_ns: Nanos,
}

impl Default for LinkParams {
    /// 100 Mbit/s with a 20 ms round trip.
    fn default() -> Self {
        LinkParams::from_mbps(100.0, 20.0, 0.0)
    }
}

impl LinkParams {
    pub fn from_mbps(bandwidth_mbps: f64, rtt_ms: f64, jitter_ms: f64) -> Self {
        LinkParams {
            bandwidth_bytes_per_s: bandwidth_mbps * 1e6 / 8.0,
            rtt_ns: nanos_from_secs(rtt_ms / 1e3),
            jitter_ns: nanos_from_secs(jitter_ms / 1e3),
        }
    }

    pub fn validate(&self) -> Result<(), TransportError> {
        if !(self.bandwidth_bytes_per_s.is_finite() && self.bandwidth_bytes_per_s > 0.0) {
            return Err(TransportError::InvalidParams(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_bytes_per_s
            )));
        }
        Ok(())
    }

    /// Serialization time of `bytes` on the wire, rounded to the nanosecond.
    pub fn transmit_ns(&self, bytes: usize) -> Nanos {
        (bytes as f64 * NANOS_PER_SEC / self.bandwidth_bytes_per_s).round() as Nanos
    }

    pub fn one_way_ns(&self) -> Nanos {
        self.rtt_ns / 2
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error("simulated link is down")]
    LinkDown,
    #[error("invalid link parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
