use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Direction, LinkParams, Nanos, TransferEvent, TransferLedger, TransportError};

/// Timing of one frame on the simulated link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub enqueue_ns: Nanos,
    /// When the first byte goes on the wire (after earlier frames in the same direction).
    pub start_ns: Nanos,
    pub tx_done_ns: Nanos,
    pub delivery_ns: Nanos,
}

#[derive(Debug, Default, Clone)]
struct Lane {
    busy_until: Nanos,
    last_delivery: Nanos,
    starts: Vec<Nanos>,
}

/// Full-duplex link in virtual time. Each direction serializes its frames:
/// `delivery = max(enqueue, busy_until) + bytes/bandwidth + rtt/2 (+ jitter)`.
/// Jitter never reorders frames within a direction.
#[derive(Debug, Clone)]
pub struct SimLink {
    params: LinkParams,
    lanes: [Lane; 2],
    ledger: TransferLedger,
    rng: ChaCha8Rng,
    down: bool,
}

fn lane(d: Direction) -> usize {
    match d {
        Direction::Up => 0,
        Direction::Down => 1,
    }
}

impl SimLink {
    pub fn new(params: LinkParams, seed: u64) -> Result<Self, TransportError> {
        params.validate()?;
        Ok(SimLink {
            params,
            lanes: Default::default(),
            ledger: TransferLedger::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            down: false,
        })
    }

    pub fn params(&self) -> &LinkParams {
        &self.params
    }

    pub fn set_down(&mut self, down: bool) {
        self.down = down;
    }

    pub fn transmit(&mut self, dir: Direction, enqueue_ns: Nanos, bytes: usize) -> Result<Delivery, TransportError> {
        if self.down {
            return Err(TransportError::LinkDown);
        }
        let jitter = if self.params.jitter_ns > 0 { self.rng.gen_range(0..=self.params.jitter_ns) } else { 0 };
        let l = &mut self.lanes[lane(dir)];
        let start_ns = enqueue_ns.max(l.busy_until);
        let tx_done_ns = start_ns + self.params.transmit_ns(bytes);
        let delivery_ns = (tx_done_ns + self.params.one_way_ns() + jitter).max(l.last_delivery);
        l.busy_until = tx_done_ns;
        l.last_delivery = delivery_ns;
        l.starts.push(start_ns);
        self.ledger.record(TransferEvent { direction: dir, bytes: bytes as u64, enqueue_ns, delivery_ns });
        Ok(Delivery { enqueue_ns, start_ns, tx_done_ns, delivery_ns })
    }

    pub fn busy_until(&self, dir: Direction) -> Nanos {
        self.lanes[lane(dir)].busy_until
    }

    /// Frames enqueued in `dir` that have not started transmitting by `now`.
    pub fn queued_at(&self, dir: Direction, now: Nanos) -> usize {
        let starts = &self.lanes[lane(dir)].starts;
        // start times are non-decreasing
        starts.len() - starts.partition_point(|&s| s <= now)
    }

    /// Earliest time at which at most `capacity - 1` frames are still waiting in `dir`.
    pub fn queue_slot_at(&self, dir: Direction, now: Nanos, capacity: usize) -> Nanos {
        let starts = &self.lanes[lane(dir)].starts;
        let waiting = self.queued_at(dir, now);
        if waiting < capacity.max(1) {
            return now;
        }
        starts[starts.len() - waiting + (waiting - capacity.max(1))]
    }

    pub fn ledger(&self) -> &TransferLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> TransferLedger {
        self.ledger
    }
}
