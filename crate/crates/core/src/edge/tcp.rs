use std::net::ToSocketAddrs;
use std::sync::mpsc::{self, SyncSender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Instant;

use crate::codec::Message;
use crate::transport::{FrameReader, FrameWriter, Nanos, TcpConnection, TransferLedger, TransportError};

use super::{CloudLink, EdgeError};

enum UpCmd {
    Frame(u64, Message),
    Flush(mpsc::Sender<()>),
}

/// Real-socket link. A background thread drains the bounded upload queue
/// while the inference loop keeps computing. Timings are wall clock.
pub struct TcpCloudLink {
    reader: FrameReader,
    writer: FrameWriter,
    queue: Option<SyncSender<UpCmd>>,
    uploader: Option<JoinHandle<()>>,
    upload_error: Arc<Mutex<Option<String>>>,
    origin: Instant,
}

impl TcpCloudLink {
    pub fn connect<A: ToSocketAddrs>(addr: A, queue_capacity: usize) -> Result<Self, EdgeError> {
        let (reader, writer) = TcpConnection::connect(addr)?.split()?;
        let (tx, rx) = mpsc::sync_channel::<UpCmd>(queue_capacity.max(1));
        let upload_error = Arc::new(Mutex::new(None));
        let uploader = {
            let (writer, err) = (writer.clone(), upload_error.clone());
            thread::spawn(move || {
                for cmd in rx {
                    match cmd {
                        UpCmd::Frame(sid, msg) => {
                            if let Err(e) = writer.send(sid, &msg) {
                                *err.lock().unwrap() = Some(e.to_string());
                            }
                        }
                        UpCmd::Flush(ack) => {
                            let _ = ack.send(());
                        }
                    }
                }
            })
        };
        Ok(TcpCloudLink {
            reader,
            writer,
            queue: Some(tx),
            uploader: Some(uploader),
            upload_error,
            origin: Instant::now(),
        })
    }

    fn queue(&self) -> Result<&SyncSender<UpCmd>, EdgeError> {
        self.queue.as_ref().ok_or(EdgeError::Transport(TransportError::Closed))
    }

    fn check_uploader(&self) -> Result<(), EdgeError> {
        match self.upload_error.lock().unwrap().take() {
            Some(e) => Err(EdgeError::Protocol(format!("background upload failed: {e}"))),
            None => Ok(()),
        }
    }
}

impl CloudLink for TcpCloudLink {
    fn now(&self) -> Nanos {
        self.origin.elapsed().as_nanos() as Nanos
    }

    fn compute(&mut self, _modeled: Nanos, measured: Nanos) -> Nanos {
        measured
    }

    fn upload(&mut self, session: u64, msg: &Message) -> Result<Nanos, EdgeError> {
        self.check_uploader()?;
        let t0 = Instant::now();
        self.queue()?
            .send(UpCmd::Frame(session, msg.clone()))
            .map_err(|_| EdgeError::Transport(TransportError::Closed))?;
        Ok(t0.elapsed().as_nanos() as Nanos)
    }

    fn send(&mut self, session: u64, msg: &Message) -> Result<(), EdgeError> {
        self.flush()?;
        self.writer.send(session, msg)?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), EdgeError> {
        let (ack_tx, ack_rx) = mpsc::channel();
        self.queue()?.send(UpCmd::Flush(ack_tx)).map_err(|_| EdgeError::Transport(TransportError::Closed))?;
        ack_rx.recv().map_err(|_| EdgeError::Transport(TransportError::Closed))?;
        self.check_uploader()
    }

    fn recv(&mut self) -> Result<(u64, Message), EdgeError> {
        self.reader.recv()?.ok_or(EdgeError::Transport(TransportError::Closed))
    }

    fn ledger(&self) -> TransferLedger {
        self.writer.ledger()
    }
}

impl Drop for TcpCloudLink {
    fn drop(&mut self) {
        self.queue.take();
        if let Some(h) = self.uploader.take() {
            let _ = h.join();
        }
        self.writer.shutdown();
    }
}
