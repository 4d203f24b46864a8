use std::io::{BufReader, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::codec::{decode_message, encode_message, read_frame, Message};

use super::{Direction, Nanos, TransferEvent, TransferLedger, TransportError};

/// Which end of the connection this process is. Decides how sends and
/// receives map onto ledger directions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Endpoint {
    Edge,
    Cloud,
}

impl Endpoint {
    fn outgoing(self) -> Direction {
        match self {
            Endpoint::Edge => Direction::Up,
            Endpoint::Cloud => Direction::Down,
        }
    }

    fn incoming(self) -> Direction {
        match self {
            Endpoint::Edge => Direction::Down,
            Endpoint::Cloud => Direction::Up,
        }
    }
}

#[derive(Debug)]
struct Shared {
    endpoint: Endpoint,
    origin: Instant,
    ledger: Mutex<TransferLedger>,
}

impl Shared {
    fn now(&self) -> Nanos {
        self.origin.elapsed().as_nanos() as Nanos
    }

    fn record(&self, direction: Direction, bytes: usize, enqueue_ns: Nanos) {
        let delivery_ns = self.now().max(enqueue_ns);
        self.ledger.lock().unwrap().record(TransferEvent { direction, bytes: bytes as u64, enqueue_ns, delivery_ns });
    }
}

/// A framed TCP connection. Wall-clock timestamps are relative to when the
/// connection was wrapped.
pub struct TcpConnection {
    stream: TcpStream,
    shared: Arc<Shared>,
}

impl TcpConnection {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, TransportError> {
        Ok(Self::new(TcpStream::connect(addr)?, Endpoint::Edge))
    }

    pub fn new(stream: TcpStream, endpoint: Endpoint) -> Self {
        let _ = stream.set_nodelay(true);
        TcpConnection {
            stream,
            shared: Arc::new(Shared { endpoint, origin: Instant::now(), ledger: Mutex::default() }),
        }
    }

    pub fn split(self) -> Result<(FrameReader, FrameWriter), TransportError> {
        let read_half = self.stream.try_clone()?;
        Ok((
            FrameReader { reader: BufReader::new(read_half), shared: self.shared.clone() },
            FrameWriter { stream: Arc::new(Mutex::new(self.stream)), shared: self.shared },
        ))
    }
}

pub struct FrameReader {
    reader: BufReader<TcpStream>,
    shared: Arc<Shared>,
}

impl FrameReader {
    /// Next message, or `None` when the peer closed cleanly.
    pub fn recv(&mut self) -> Result<Option<(u64, Message)>, TransportError> {
        let start = self.shared.now();
        match read_frame(&mut self.reader)? {
            None => Ok(None),
            Some(frame) => {
                self.shared.record(self.shared.endpoint.incoming(), frame.len(), start);
                Ok(Some(decode_message(&frame)?))
            }
        }
    }

    pub fn ledger(&self) -> TransferLedger {
        self.shared.ledger.lock().unwrap().clone()
    }
}

/// Cloneable send half; writes of whole frames are serialized by a mutex.
#[derive(Clone)]
pub struct FrameWriter {
    stream: Arc<Mutex<TcpStream>>,
    shared: Arc<Shared>,
}

impl FrameWriter {
    pub fn send(&self, session_id: u64, msg: &Message) -> Result<usize, TransportError> {
        self.send_raw(&encode_message(session_id, msg))
    }

    pub fn send_raw(&self, frame: &[u8]) -> Result<usize, TransportError> {
        let enqueue = self.shared.now();
        let mut s = self.stream.lock().unwrap();
        s.write_all(frame).map_err(|e| match e.kind() {
            std::io::ErrorKind::BrokenPipe | std::io::ErrorKind::ConnectionReset => TransportError::Closed,
            _ => e.into(),
        })?;
        s.flush()?;
        drop(s);
        self.shared.record(self.shared.endpoint.outgoing(), frame.len(), enqueue);
        Ok(frame.len())
    }

    /// Closes both directions; a blocked reader on either side sees end of stream.
    pub fn shutdown(&self) {
        let _ = self.stream.lock().unwrap().shutdown(Shutdown::Both);
    }

    pub fn ledger(&self) -> TransferLedger {
        self.shared.ledger.lock().unwrap().clone()
    }
}
