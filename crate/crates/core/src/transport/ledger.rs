use serde::{Deserialize, Serialize};

use super::Nanos;

/// `Up` is edge to cloud, `Down` is cloud to edge, whichever side records it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferEvent {
    pub direction: Direction,
    pub bytes: u64,
    pub enqueue_ns: Nanos,
    pub delivery_ns: Nanos,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferLedger {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub events: Vec<TransferEvent>,
}

impl TransferLedger {
    pub fn record(&mut self, event: TransferEvent) {
        match event.direction {
            Direction::Up => self.bytes_up += event.bytes,
            Direction::Down => self.bytes_down += event.bytes,
        }
        self.events.push(event);
    }

    pub fn total_bytes(&self) -> u64 {
        self.bytes_up + self.bytes_down
    }

    pub fn frames(&self, direction: Direction) -> usize {
        self.events.iter().filter(|e| e.direction == direction).count()
    }

    /// Sum of per-frame enqueue-to-delivery intervals in one direction.
    pub fn transfer_time_ns(&self, direction: Direction) -> Nanos {
        self.events
            .iter()
            .filter(|e| e.direction == direction)
            .map(|e| e.delivery_ns - e.enqueue_ns)
            .sum()
    }

    /// Totals agree with the event list and timestamps are monotone per direction.
    pub fn is_consistent(&self) -> bool {
        let sum = |d: Direction| self.events.iter().filter(|e| e.direction == d).map(|e| e.bytes).sum::<u64>();
        let monotone = |d: Direction| {
            let mut last = (0, 0);
            self.events.iter().filter(|e| e.direction == d).all(|e| {
                let ok = e.enqueue_ns >= last.0 && e.delivery_ns >= last.1 && e.delivery_ns >= e.enqueue_ns;
                last = (e.enqueue_ns, e.delivery_ns);
                ok
            })
        };
        sum(Direction::Up) == self.bytes_up
            && sum(Direction::Down) == self.bytes_down
            && monotone(Direction::Up)
            && monotone(Direction::Down)
    }

    pub fn merge(&mut self, other: &TransferLedger) {
        self.bytes_up += other.bytes_up;
        self.bytes_down += other.bytes_down;
        self.events.extend_from_slice(&other.events);
    }
}
