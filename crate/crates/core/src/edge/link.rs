use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cloud::{CloudServer, InferPoll, InferStep, ServerMode};
use crate::codec::{ErrorCode, Message};
use crate::transport::{nanos_from_secs, Direction, LinkParams, Nanos, SimLink, TransferLedger, TransportError};

use super::EdgeError;

/// Modeled compute costs for the simulator, per layer and position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub edge_layer_ns: Nanos,
    pub exit_head_ns: Nanos,
    pub cloud_layer_ns: Nanos,
    pub cloud_head_ns: Nanos,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { edge_layer_ns: 1_000_000, exit_head_ns: 100_000, cloud_layer_ns: 100_000, cloud_head_ns: 10_000 }
    }
}

impl CostModel {
    pub fn edge(&self, positions: usize, layers: usize, exit_evaluations: u64) -> Nanos {
        (positions * layers) as Nanos * self.edge_layer_ns + exit_evaluations * self.exit_head_ns
    }

    pub fn cloud(&self, step: &InferStep) -> Nanos {
        (step.new_positions * step.layers) as Nanos * self.cloud_layer_ns + self.cloud_head_ns
    }
}

/// The edge's view of the cloud. Uploads go through a bounded background
/// queue; `send` is the synchronous path and acts as a flush barrier, so
/// everything queued earlier reaches the cloud before the sent frame.
pub trait CloudLink {
    fn now(&self) -> Nanos;

    /// Books local compute. Simulated links advance their clock by `modeled`;
    /// real links return `measured`.
    fn compute(&mut self, modeled: Nanos, measured: Nanos) -> Nanos;

    /// Queues a frame for background transmission. Returns how long the caller
    /// was blocked on a full queue.
    fn upload(&mut self, session: u64, msg: &Message) -> Result<Nanos, EdgeError>;

    fn send(&mut self, session: u64, msg: &Message) -> Result<(), EdgeError>;

    /// Blocks until everything queued so far has been handed to the transport.
    fn flush(&mut self) -> Result<(), EdgeError>;

    fn recv(&mut self) -> Result<(u64, Message), EdgeError>;

    fn ledger(&self) -> TransferLedger;
}

/// No cloud at all: a virtual clock that refuses to transmit.
#[derive(Debug, Default)]
pub struct OfflineLink {
    now: Nanos,
}

impl CloudLink for OfflineLink {
    fn now(&self) -> Nanos {
        self.now
    }

    fn compute(&mut self, modeled: Nanos, _measured: Nanos) -> Nanos {
        self.now += modeled;
        modeled
    }

    fn upload(&mut self, _: u64, _: &Message) -> Result<Nanos, EdgeError> {
        Err(EdgeError::Offline)
    }

    fn send(&mut self, _: u64, _: &Message) -> Result<(), EdgeError> {
        Err(EdgeError::Offline)
    }

    fn flush(&mut self) -> Result<(), EdgeError> {
        Ok(())
    }

    fn recv(&mut self) -> Result<(u64, Message), EdgeError> {
        Err(EdgeError::Offline)
    }

    fn ledger(&self) -> TransferLedger {
        TransferLedger::default()
    }
}

#[derive(Debug)]
struct InFlight {
    delivery: Nanos,
    session: u64,
    msg: Message,
}

#[derive(Debug)]
struct PendingInfer {
    session: u64,
    target: u32,
    deadline: Nanos,
}

/// Discrete-event simulation of one edge talking to an in-process server over
/// a [`SimLink`]. Upstream frames are handled in delivery order whenever the
/// edge waits for a reply; uploads land on arrival while infer requests are
/// serialized on the server's compute, which is charged by the cost model.
pub struct SimCloudLink {
    link: SimLink,
    server: Arc<CloudServer>,
    costs: CostModel,
    queue_capacity: usize,
    infer_timeout_ns: Nanos,
    now: Nanos,
    server_free_at: Nanos,
    up: VecDeque<InFlight>,
    down: VecDeque<InFlight>,
    pending: VecDeque<PendingInfer>,
}

impl SimCloudLink {
    pub fn new(
        server: Arc<CloudServer>,
        params: LinkParams,
        seed: u64,
        costs: CostModel,
        queue_capacity: usize,
    ) -> Result<Self, TransportError> {
        Ok(SimCloudLink {
            link: SimLink::new(params, seed)?,
            server,
            costs,
            queue_capacity: queue_capacity.max(1),
            infer_timeout_ns: nanos_from_secs(10.0),
            now: 0,
            server_free_at: 0,
            up: VecDeque::new(),
            down: VecDeque::new(),
            pending: VecDeque::new(),
        })
    }

    pub fn with_infer_timeout(mut self, timeout_ns: Nanos) -> Self {
        self.infer_timeout_ns = timeout_ns;
        self
    }

    pub fn set_link_down(&mut self, down: bool) {
        self.link.set_down(down);
    }

    pub fn server(&self) -> &Arc<CloudServer> {
        &self.server
    }

    fn transmit(&mut self, session: u64, msg: &Message, at: Nanos) -> Result<(), EdgeError> {
        let d = self.link.transmit(Direction::Up, at, msg.frame_len())?;
        self.up.push_back(InFlight { delivery: d.delivery_ns, session, msg: msg.clone() });
        Ok(())
    }

    fn reply(&mut self, session: u64, msg: Message, at: Nanos) -> Result<(), EdgeError> {
        let d = self.link.transmit(Direction::Down, at, msg.frame_len())?;
        self.down.push_back(InFlight { delivery: d.delivery_ns, session, msg });
        Ok(())
    }

    /// Answers queued infer requests that can run now; stops at the first
    /// that still lacks context.
    fn drive_pending(&mut self, at: Nanos) -> Result<(), EdgeError> {
        while let Some(p) = self.pending.front() {
            let (session, target) = (p.session, p.target);
            let start = at.max(self.server_free_at);
            if self.server.mode() == ServerMode::Full {
                self.pending.pop_front();
                let mut t = start;
                loop {
                    match self.server.next_full_token(session, target, t) {
                        Ok(Some(step)) => {
                            let cost = self.costs.cloud(&step);
                            t += cost;
                            self.reply(session, Message::InferResponse { token: step.token, cloud_compute_ns: cost }, t)?;
                        }
                        Ok(None) => break,
                        Err(e) => {
                            self.reply(session, e.to_message(), t)?;
                            break;
                        }
                    }
                }
                self.server_free_at = t;
                continue;
            }
            match self.server.poll_infer(session, target, start) {
                Ok(InferPoll::Pending { .. }) => return Ok(()),
                Ok(InferPoll::Ready(step)) => {
                    self.pending.pop_front();
                    let cost = self.costs.cloud(&step);
                    self.server_free_at = start + cost;
                    let msg = Message::InferResponse { token: step.token, cloud_compute_ns: cost };
                    self.reply(session, msg, self.server_free_at)?;
                }
                Err(e) => {
                    self.pending.pop_front();
                    self.reply(session, e.to_message(), start)?;
                }
            }
        }
        Ok(())
    }

    fn expire_pending(&mut self, before: Nanos) -> Result<(), EdgeError> {
        while let Some(p) = self.pending.front() {
            if p.deadline >= before {
                return Ok(());
            }
            let (session, deadline) = (p.session, p.deadline);
            let missing = p.target;
            self.pending.pop_front();
            let msg = Message::error(ErrorCode::ContextTimeout, format!("context up to {missing} did not arrive"));
            self.reply(session, msg, deadline.max(self.server_free_at))?;
            self.drive_pending(deadline)?;
        }
        Ok(())
    }

    /// Runs the server over every upstream frame sent so far.
    fn run_server(&mut self) -> Result<(), EdgeError> {
        while let Some(f) = self.up.pop_front() {
            self.expire_pending(f.delivery)?;
            match &f.msg {
                Message::InferRequest { target_position } => {
                    self.pending.push_back(PendingInfer {
                        session: f.session,
                        target: *target_position,
                        deadline: f.delivery + self.infer_timeout_ns,
                    });
                }
                other => {
                    if let Some(err) = self.server.handle_control(f.session, other, f.delivery) {
                        self.reply(f.session, err, f.delivery)?;
                    }
                }
            }
            self.drive_pending(f.delivery)?;
        }
        self.expire_pending(Nanos::MAX)
    }
}

impl CloudLink for SimCloudLink {
    fn now(&self) -> Nanos {
        self.now
    }

    fn compute(&mut self, modeled: Nanos, _measured: Nanos) -> Nanos {
        self.now += modeled;
        modeled
    }

    fn upload(&mut self, session: u64, msg: &Message) -> Result<Nanos, EdgeError> {
        let slot = self.link.queue_slot_at(Direction::Up, self.now, self.queue_capacity);
        let blocked = slot - self.now;
        self.now = slot;
        self.transmit(session, msg, slot)?;
        Ok(blocked)
    }

    fn send(&mut self, session: u64, msg: &Message) -> Result<(), EdgeError> {
        // Queued uploads are already ahead of us on the serialized uplink.
        self.transmit(session, msg, self.now)
    }

    fn flush(&mut self) -> Result<(), EdgeError> {
        Ok(())
    }

    fn recv(&mut self) -> Result<(u64, Message), EdgeError> {
        self.run_server()?;
        let f = self.down.pop_front().ok_or(EdgeError::Transport(TransportError::Closed))?;
        self.now = self.now.max(f.delivery);
        Ok((f.session, f.msg))
    }

    fn ledger(&self) -> TransferLedger {
        self.link.ledger().clone()
    }
}
