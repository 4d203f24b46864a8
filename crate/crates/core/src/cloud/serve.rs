use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::codec::{decode_message, encode_message, read_frame, Message};
use crate::transport::{Endpoint, FrameWriter, Nanos, TcpConnection, TransportError};

use super::{CloudServer, ServerMode};

/// Answers one infer request, calling `send` for every response frame.
/// Full-model servers stream one response per generated token.
pub(crate) fn answer_infer(
    server: &CloudServer,
    sid: u64,
    target: u32,
    now: impl Fn() -> Nanos,
    timeout: Duration,
    mut send: impl FnMut(Message) -> bool,
) {
    match server.mode() {
        ServerMode::Full => loop {
            match server.next_full_token(sid, target, now()) {
                Ok(Some(step)) => {
                    if !send(Message::InferResponse { token: step.token, cloud_compute_ns: step.wall_ns }) {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    send(e.to_message());
                    return;
                }
            }
        },
        ServerMode::Partition | ServerMode::Naive => {
            let msg = match server.infer_blocking(sid, target, now(), timeout) {
                Ok(step) => Message::InferResponse { token: step.token, cloud_compute_ns: step.wall_ns },
                Err(e) => e.to_message(),
            };
            send(msg);
        }
    }
}

/// Running TCP server. Dropping the handle does not stop it; call [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        for t in self.threads {
            let _ = t.join();
        }
    }
}

fn sleep_until_stopped(stop: &AtomicBool, total: Duration) -> bool {
    let step = Duration::from_millis(10);
    let start = Instant::now();
    while start.elapsed() < total {
        if stop.load(Ordering::SeqCst) {
            return true;
        }
        thread::sleep(step.min(total - start.elapsed().min(total)));
    }
    stop.load(Ordering::SeqCst)
}

/// Serves connections on `listener` until shut down. Each connection gets a
/// reader thread for uploads and control frames and a worker thread for infer
/// requests, so uploads keep landing while an infer waits for context.
pub fn serve_tcp(server: Arc<CloudServer>, listener: TcpListener, infer_timeout: Duration) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let stop = Arc::new(AtomicBool::new(false));
    let origin = Instant::now();
    let clock = move || origin.elapsed().as_nanos() as Nanos;

    let sweeper = {
        let (server, stop) = (server.clone(), stop.clone());
        thread::spawn(move || {
            let interval = Duration::from_nanos(server.policy().sweep_interval_ns);
            while !sleep_until_stopped(&stop, interval) {
                server.evict(clock());
            }
        })
    };

    let acceptor = {
        let stop = stop.clone();
        thread::spawn(move || {
            let mut conns = Vec::new();
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::debug!("connection from {peer}");
                        if stream.set_nonblocking(false).is_err() {
                            continue;
                        }
                        let conn = TcpConnection::new(stream, Endpoint::Cloud);
                        match conn.split() {
                            Ok((reader, writer)) => {
                                conns.push((writer.clone(), spawn_connection(server.clone(), reader, writer, clock, infer_timeout)));
                            }
                            Err(e) => log::warn!("dropping connection from {peer}: {e}"),
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        thread::sleep(Duration::from_millis(50));
                    }
                }
            }
            for (writer, handle) in conns {
                writer.shutdown();
                let _ = handle.join();
            }
        })
    };

    Ok(ServerHandle { addr, stop, threads: vec![acceptor, sweeper] })
}

fn spawn_connection(
    server: Arc<CloudServer>,
    mut reader: crate::transport::FrameReader,
    writer: FrameWriter,
    clock: impl Fn() -> Nanos + Copy + Send + 'static,
    timeout: Duration,
) -> JoinHandle<()> {
    thread::spawn(move || {
        let (tx, rx) = mpsc::channel::<(u64, u32)>();
        let worker = {
            let (server, writer) = (server.clone(), writer.clone());
            thread::spawn(move || {
                for (sid, target) in rx {
                    answer_infer(&server, sid, target, clock, timeout, |m| writer.send(sid, &m).is_ok());
                }
            })
        };
        loop {
            match reader.recv() {
                Ok(Some((sid, Message::InferRequest { target_position }))) => {
                    let _ = tx.send((sid, target_position));
                }
                Ok(Some((sid, msg))) => {
                    if let Some(reply) = server.handle_control(sid, &msg, clock()) {
                        if writer.send(sid, &reply).is_err() {
                            break;
                        }
                    }
                }
                Ok(None) => break,
                Err(TransportError::Codec(e)) => {
                    // The stream position is unknown after a bad frame; report and hang up.
                    let _ = writer.send(0, &Message::error(e.code(), e.to_string()));
                    break;
                }
                Err(e) => {
                    log::debug!("connection ended: {e}");
                    break;
                }
            }
        }
        drop(tx);
        let _ = worker.join();
        writer.shutdown();
    })
}

/// Serves a single byte stream (for example stdin/stdout) sequentially.
/// Infer requests are answered from context already received, so a missing
/// position fails immediately with `CONTEXT_TIMEOUT`.
pub fn serve_stream<R: Read, W: Write>(server: &CloudServer, mut input: R, mut output: W) -> io::Result<()> {
    let origin = Instant::now();
    let clock = || origin.elapsed().as_nanos() as Nanos;
    let write = |sid: u64, m: &Message, out: &mut W| -> bool {
        out.write_all(&encode_message(sid, m)).and_then(|_| out.flush()).is_ok()
    };
    loop {
        let frame = match read_frame(&mut input) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => {
                write(0, &Message::error(e.code(), e.to_string()), &mut output);
                return Ok(());
            }
        };
        let (sid, msg) = match decode_message(&frame) {
            Ok(x) => x,
            Err(e) => {
                write(0, &Message::error(e.code(), e.to_string()), &mut output);
                continue;
            }
        };
        if let Message::InferRequest { target_position } = msg {
            answer_infer(server, sid, target_position, clock, Duration::ZERO, |m| write(sid, &m, &mut output));
        } else if let Some(reply) = server.handle_control(sid, &msg, clock()) {
            write(sid, &reply, &mut output);
        }
    }
}
