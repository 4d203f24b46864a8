use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::model::KvCache;
use crate::transport::Nanos;

#[derive(Debug, Default)]
pub(crate) struct ContextRows {
    pub rows: BTreeMap<u32, Vec<f32>>,
    /// Positions below this are folded into the cache; uploads for them are ignored.
    pub consumed_upto: u32,
    pub closed: bool,
}

impl ContextRows {
    pub fn covers(&self, from: u32, to_inclusive: u32) -> bool {
        (from..=to_inclusive).all(|p| self.rows.contains_key(&p))
    }

    pub fn first_missing(&self, from: u32, to_inclusive: u32) -> Option<u32> {
        (from..=to_inclusive).find(|p| !self.rows.contains_key(p))
    }
}

/// Pending split-layer rows. Inserts never wait on inference; readers can
/// block until a position range is complete.
#[derive(Debug, Default)]
pub(crate) struct ContextStore {
    inner: Mutex<ContextRows>,
    changed: Condvar,
}

impl ContextStore {
    pub fn lock(&self) -> MutexGuard<'_, ContextRows> {
        self.inner.lock().unwrap()
    }

    /// Inserts rows, first write wins. Returns how many rows were new.
    pub fn insert(&self, first_position: u32, rows: impl Iterator<Item = Vec<f32>>) -> usize {
        let mut g = self.lock();
        let mut added = 0;
        for (i, row) in rows.enumerate() {
            let p = first_position + i as u32;
            if p < g.consumed_upto {
                continue;
            }
            if let std::collections::btree_map::Entry::Vacant(e) = g.rows.entry(p) {
                e.insert(row);
                added += 1;
            }
        }
        drop(g);
        if added > 0 {
            self.changed.notify_all();
        }
        added
    }

    pub fn close(&self) {
        let mut g = self.lock();
        g.closed = true;
        g.rows.clear();
        drop(g);
        self.changed.notify_all();
    }

    /// Waits until `[from, to]` is present, the store closes, or the deadline passes.
    pub fn wait_for(&self, from: u32, to_inclusive: u32, timeout: Duration) -> MutexGuard<'_, ContextRows> {
        let deadline = Instant::now() + timeout;
        let mut g = self.lock();
        while !g.closed && !g.covers(from, to_inclusive) {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            g = self.changed.wait_timeout(g, deadline - now).unwrap().0;
        }
        g
    }
}

#[derive(Debug)]
pub(crate) struct ComputeState {
    pub cache: KvCache,
    /// Full-model sessions: prompt plus every token generated so far.
    pub tokens: Vec<u32>,
    /// Partition sessions: token answered for position `processed_upto - 1`.
    pub last_token: Option<u32>,
    /// Positions pushed through the cloud layers over the session's lifetime.
    pub positions_computed: u64,
}

#[derive(Debug)]
pub(crate) struct Session {
    pub context: ContextStore,
    pub compute: Mutex<ComputeState>,
    last_activity: AtomicU64,
}

impl Session {
    pub fn new(cache: KvCache, prompt: Vec<u32>, now: Nanos) -> Self {
        Session {
            context: ContextStore::default(),
            compute: Mutex::new(ComputeState { cache, tokens: prompt, last_token: None, positions_computed: 0 }),
            last_activity: AtomicU64::new(now),
        }
    }

    pub fn touch(&self, now: Nanos) {
        self.last_activity.fetch_max(now, Ordering::Relaxed);
    }

    pub fn last_activity(&self) -> Nanos {
        self.last_activity.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    #[test]
    fn first_write_wins_and_consumed_rows_are_ignored() {
        let s = ContextStore::default();
        assert_eq!(s.insert(0, (0..30).map(|i| vec![i as f32])), 30);
        assert_eq!(s.insert(30, std::iter::once(vec![30.0])), 1);
        assert_eq!(s.lock().rows.len(), 31);
        assert_eq!(s.insert(5, std::iter::once(vec![-1.0])), 0);
        assert_eq!(s.lock().rows[&5], vec![5.0]);
        s.lock().consumed_upto = 40;
        assert_eq!(s.insert(35, std::iter::once(vec![0.0])), 0);
    }

    #[test]
    fn waiter_wakes_on_insert() {
        let s = Arc::new(ContextStore::default());
        let s2 = s.clone();
        let t = std::thread::spawn(move || s2.wait_for(0, 2, Duration::from_secs(10)).covers(0, 2));
        std::thread::sleep(Duration::from_millis(20));
        s.insert(0, (0..3).map(|_| vec![0.0]));
        assert!(t.join().unwrap());
    }

    #[test]
    fn waiter_times_out_on_gap() {
        let s = ContextStore::default();
        s.insert(0, (0..2).map(|_| vec![0.0]));
        let g = s.wait_for(0, 2, Duration::from_millis(30));
        assert_eq!(g.first_missing(0, 2), Some(2));
    }
}
