//! Transaction records.

use std::collections::BTreeMap;
use std::fmt;

use crate::types::{AbortReason, CcClass, ItemId, Millis, TxnId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Reading,
    Disconnected,
    Writing,
    Committed,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Committed | Phase::Aborted)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// What a transaction saw for one item.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadEntry {
    pub value: Value,
    pub version: u64,
    pub class: CcClass,
    /// When the value was delivered (after any lock wait).
    pub time: Millis,
}

/// Intended write for an item that was read.
///
/// `Set` installs an absolute value (for reconciled items the difference to
/// the read value is replayed). `Add` is relative to the read value.
#[derive(Debug, Clone, PartialEq)]
pub enum WriteIntent {
    Set(Value),
    Add(i64),
}

/// A disconnected transaction. Owned by the issuing session; every engine
/// call borrows it mutably.
#[derive(Debug, Clone)]
pub struct Txn {
    pub(crate) id: TxnId,
    pub(crate) phase: Phase,
    pub(crate) read_only: bool,
    pub(crate) arrival: Millis,
    pub(crate) first_read: Option<Millis>,
    pub(crate) disconnect_at: Option<Millis>,
    pub(crate) write_submit: Option<Millis>,
    pub(crate) termination: Option<Millis>,
    pub(crate) read_set: BTreeMap<ItemId, ReadEntry>,
    pub(crate) write_set: BTreeMap<ItemId, WriteIntent>,
    pub(crate) escrow: BTreeMap<ItemId, i64>,
    pub(crate) snapshot: Option<u64>,
    pub(crate) pending: Option<ItemId>,
    pub(crate) wait_start: Option<Millis>,
    pub(crate) lock_wait: Millis,
    pub(crate) abort_reason: Option<AbortReason>,
}

impl Txn {
    pub(crate) fn new(id: TxnId, read_only: bool, arrival: Millis) -> Self {
        Self {
            id,
            phase: Phase::Reading,
            read_only,
            arrival,
            first_read: None,
            disconnect_at: None,
            write_submit: None,
            termination: None,
            read_set: BTreeMap::new(),
            write_set: BTreeMap::new(),
            escrow: BTreeMap::new(),
            snapshot: None,
            pending: None,
            wait_start: None,
            lock_wait: 0.0,
            abort_reason: None,
        }
    }

    pub fn id(&self) -> TxnId {
        self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn read_only(&self) -> bool {
        self.read_only
    }

    pub fn arrival(&self) -> Millis {
        self.arrival
    }

    pub fn first_read(&self) -> Option<Millis> {
        self.first_read
    }

    pub fn write_submit(&self) -> Option<Millis> {
        self.write_submit
    }

    pub fn termination(&self) -> Option<Millis> {
        self.termination
    }

    pub fn read_set(&self) -> &BTreeMap<ItemId, ReadEntry> {
        &self.read_set
    }

    pub fn write_set(&self) -> &BTreeMap<ItemId, WriteIntent> {
        &self.write_set
    }

    pub fn escrow_grants(&self) -> &BTreeMap<ItemId, i64> {
        &self.escrow
    }

    /// Item this transaction is queued on, if any.
    pub fn waiting_for(&self) -> Option<&ItemId> {
        self.pending.as_ref()
    }

    /// Accumulated time spent queued for locks.
    pub fn lock_wait(&self) -> Millis {
        self.lock_wait
    }

    pub fn abort_reason(&self) -> Option<AbortReason> {
        self.abort_reason
    }

    /// Time between disconnecting and submitting the write set.
    pub fn disconnect_time(&self) -> Millis {
        match (self.disconnect_at, self.write_submit) {
            (Some(d), Some(w)) => (w - d).max(0.0),
            _ => 0.0,
        }
    }
}
