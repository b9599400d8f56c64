//! Exclusive read-time locks for class `P` with FIFO wait queues and a
//! wait-for graph.
//!
//! A transaction waits on at most one item at a time, so the wait-for graph is
//! functional: every waiter has exactly one outgoing edge, to the current
//! holder of the item it is queued on. A request that would close a cycle is
//! refused before anything is recorded, which keeps the graph acyclic at all
//! times.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use thiserror::Error;

use crate::types::{ItemId, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquireOutcome {
    Granted,
    Queued,
    DeadlockRefused,
}

/// Result of handing a lock on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Release {
    pub item: ItemId,
    /// Waiter that now holds the lock, if any.
    pub next_holder: Option<TxnId>,
    /// Waiters queued at the moment of the unlock (before the hand-over).
    pub queue_len: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LockError {
    #[error("transaction {txn} does not hold {item}")]
    NotHolder { item: ItemId, txn: TxnId },
}

#[derive(Debug, Default)]
struct Entry {
    holder: Option<TxnId>,
    queue: VecDeque<TxnId>,
}

#[derive(Debug, Default)]
struct Table {
    entries: HashMap<ItemId, Entry>,
    waiting_on: HashMap<TxnId, ItemId>,
    held: HashMap<TxnId, BTreeSet<ItemId>>,
}

impl Table {
    fn holder(&self, id: &ItemId) -> Option<TxnId> {
        self.entries.get(id).and_then(|e| e.holder)
    }

    /// Follows waits-for edges from `start`; true if the walk reaches `target`.
    fn reaches(&self, start: TxnId, target: TxnId) -> bool {
        let mut cur = start;
        let mut steps = 0usize;
        loop {
            if cur == target {
                return true;
            }
            let Some(item) = self.waiting_on.get(&cur) else {
                return false;
            };
            let Some(next) = self.holder(item) else {
                return false;
            };
            cur = next;
            steps += 1;
            if steps > self.waiting_on.len() + 1 {
                // cannot happen while the graph stays acyclic
                return false;
            }
        }
    }

    fn hand_over(&mut self, id: &ItemId) -> Release {
        let entry = self.entries.entry(id.clone()).or_default();
        let queue_len = entry.queue.len();
        let next = entry.queue.pop_front();
        entry.holder = next;
        if entry.holder.is_none() && entry.queue.is_empty() {
            self.entries.remove(id);
        }
        if let Some(t) = next {
            self.waiting_on.remove(&t);
            self.held.entry(t).or_default().insert(id.clone());
        }
        Release {
            item: id.clone(),
            next_holder: next,
            queue_len,
        }
    }
}

/// The lock table and wait-for graph behind one mutual-exclusion region.
#[derive(Debug, Default)]
pub struct LockManager {
    table: Mutex<Table>,
    changed: Condvar,
}

impl LockManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn acquire(&self, txn: TxnId, id: &ItemId) -> AcquireOutcome {
        let mut t = self.table.lock();
        let holder = t.holder(id);
        match holder {
            None => {
                t.entries.entry(id.clone()).or_default().holder = Some(txn);
                t.held.entry(txn).or_default().insert(id.clone());
                AcquireOutcome::Granted
            }
            Some(h) if h == txn => AcquireOutcome::Granted,
            Some(h) => {
                if t.waiting_on.get(&txn) == Some(id) {
                    return AcquireOutcome::Queued;
                }
                if t.reaches(h, txn) {
                    return AcquireOutcome::DeadlockRefused;
                }
                t.entries.get_mut(id).expect("held entry").queue.push_back(txn);
                t.waiting_on.insert(txn, id.clone());
                AcquireOutcome::Queued
            }
        }
    }

    pub fn release(&self, txn: TxnId, id: &ItemId) -> Result<Release, LockError> {
        let mut t = self.table.lock();
        if t.holder(id) != Some(txn) {
            return Err(LockError::NotHolder {
                item: id.clone(),
                txn,
            });
        }
        if let Some(set) = t.held.get_mut(&txn) {
            set.remove(id);
            if set.is_empty() {
                t.held.remove(&txn);
            }
        }
        let r = t.hand_over(id);
        drop(t);
        self.changed.notify_all();
        Ok(r)
    }

    /// Releases every lock of `txn` in canonical order and withdraws any
    /// pending request it has queued.
    pub fn release_all(&self, txn: TxnId) -> Vec<Release> {
        let mut t = self.table.lock();
        if let Some(item) = t.waiting_on.remove(&txn) {
            if let Some(e) = t.entries.get_mut(&item) {
                e.queue.retain(|&w| w != txn);
            }
        }
        let held = t.held.remove(&txn).unwrap_or_default();
        let out = held.iter().map(|id| t.hand_over(id)).collect();
        drop(t);
        self.changed.notify_all();
        out
    }

    /// Empties the wait queue of `id` without granting; the holder keeps the
    /// lock. Used when an item leaves class `P`.
    pub fn withdraw_waiters(&self, id: &ItemId) -> Vec<TxnId> {
        let mut t = self.table.lock();
        let waiters: Vec<TxnId> = match t.entries.get_mut(id) {
            Some(e) => e.queue.drain(..).collect(),
            None => Vec::new(),
        };
        for w in &waiters {
            t.waiting_on.remove(w);
        }
        drop(t);
        if !waiters.is_empty() {
            self.changed.notify_all();
        }
        waiters
    }

    pub fn holder(&self, id: &ItemId) -> Option<TxnId> {
        self.table.lock().holder(id)
    }

    pub fn holds(&self, txn: TxnId, id: &ItemId) -> bool {
        self.holder(id) == Some(txn)
    }

    pub fn queue(&self, id: &ItemId) -> Vec<TxnId> {
        self.table
            .lock()
            .entries
            .get(id)
            .map(|e| e.queue.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn queue_len(&self, id: &ItemId) -> usize {
        self.table
            .lock()
            .entries
            .get(id)
            .map_or(0, |e| e.queue.len())
    }

    /// Length of the lock queue counting the holder at its head.
    pub fn occupancy(&self, id: &ItemId) -> usize {
        let t = self.table.lock();
        t.holder(id).map_or(0, |_| 1) + t.entries.get(id).map_or(0, |e| e.queue.len())
    }

    pub fn waiting_on(&self, txn: TxnId) -> Option<ItemId> {
        self.table.lock().waiting_on.get(&txn).cloned()
    }

    pub fn held_by(&self, txn: TxnId) -> Vec<ItemId> {
        self.table
            .lock()
            .held
            .get(&txn)
            .map(|s| s.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// Current waits-for edges `(waiter, holder)`, sorted.
    pub fn wfg_edges(&self) -> Vec<(TxnId, TxnId)> {
        let t = self.table.lock();
        let mut edges: Vec<_> = t
            .waiting_on
            .iter()
            .filter_map(|(w, item)| t.holder(item).map(|h| (*w, h)))
            .collect();
        edges.sort_unstable();
        edges
    }

    /// Blocks until `txn` holds `id` or is no longer queued for it. Returns
    /// true when the lock was granted.
    pub fn wait_granted(&self, txn: TxnId, id: &ItemId, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|d| Instant::now() + d);
        let mut t = self.table.lock();
        loop {
            if t.holder(id) == Some(txn) {
                return true;
            }
            if t.waiting_on.get(&txn) != Some(id) {
                return false;
            }
            match deadline {
                Some(d) => {
                    if self.changed.wait_until(&mut t, d).timed_out() {
                        return t.holder(id) == Some(txn);
                    }
                }
                None => self.changed.wait(&mut t),
            }
        }
    }

    /// `item,holder,queue...` per locked item, sorted by item.
    pub fn dump(&self) -> String {
        let t = self.table.lock();
        let mut ids: Vec<_> = t.entries.keys().cloned().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            let e = &t.entries[&id];
            let _ = write!(out, "{id},");
            if let Some(h) = e.holder {
                let _ = write!(out, "{h}");
            }
            for w in &e.queue {
                let _ = write!(out, ",{w}");
            }
            out.push('\n');
        }
        out
    }
}
