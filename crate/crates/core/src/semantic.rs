//! Semantic concurrency control for numeric items.
//!
//! Class `R` reconciles: a write is a delta replayed against the latest
//! committed value at commit time (`x + (new - read)`), and only a constraint
//! violation aborts. Class `E` escrows: a transaction announces its delta at
//! read time and is granted a reservation only if every combination of the
//! outstanding reservations keeps the item inside its constraint. The check
//! uses the two-sided worst case
//!
//! ```text
//! low  = committed - sum(pending decrements)   must satisfy the lower bound
//! high = committed + sum(pending increments)   must satisfy the upper bound
//! ```
//!
//! so any subset of granted reservations may commit, in any order.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::store::{Constraint, Store, StoreError};
use crate::types::{CcClass, ItemId, TxnId, Value};

/// `x + (xnew - xread)`: the additive dependency function.
pub fn apply_dependency(current: i64, read: i64, new: i64) -> Option<i64> {
    current.checked_add(new.checked_sub(read)?)
}

/// Replays `delta` on `current`, failing if the result leaves the constraint
/// (or overflows).
pub fn reconcile(current: i64, delta: i64, constraint: Option<&Constraint>) -> Option<i64> {
    let candidate = current.checked_add(delta)?;
    match constraint {
        Some(c) if !c.satisfied(candidate) => None,
        _ => Some(candidate),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscrowDecision {
    Granted,
    Refused,
}

/// Outstanding escrow reservations of one item, keyed by transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EscrowState {
    decrements: BTreeMap<TxnId, i64>,
    increments: BTreeMap<TxnId, i64>,
}

impl EscrowState {
    pub fn worst_low(&self, committed: i64) -> i128 {
        committed as i128 - self.decrements.values().map(|&d| d as i128).sum::<i128>()
    }

    pub fn worst_high(&self, committed: i64) -> i128 {
        committed as i128 + self.increments.values().map(|&d| d as i128).sum::<i128>()
    }

    pub fn granted(&self, txn: TxnId) -> Option<i64> {
        self.decrements
            .get(&txn)
            .map(|d| -d)
            .or_else(|| self.increments.get(&txn).copied())
    }

    pub fn pending(&self) -> usize {
        self.decrements.len() + self.increments.len()
    }

    /// Grants `delta` to `txn` if the worst-case interval stays admissible.
    /// A second request by the same transaction replaces its earlier one only
    /// if the replacement is itself admissible; otherwise the old grant stays.
    pub fn request(
        &mut self,
        committed: i64,
        constraint: Option<&Constraint>,
        txn: TxnId,
        delta: i64,
    ) -> EscrowDecision {
        let mut candidate = self.clone();
        candidate.remove(txn);
        candidate.insert(txn, delta);
        if candidate.admissible(committed, constraint) {
            *self = candidate;
            EscrowDecision::Granted
        } else {
            EscrowDecision::Refused
        }
    }

    fn insert(&mut self, txn: TxnId, delta: i64) {
        if delta < 0 {
            self.decrements.insert(txn, -delta);
        } else {
            self.increments.insert(txn, delta);
        }
    }

    fn remove(&mut self, txn: TxnId) -> Option<i64> {
        self.decrements
            .remove(&txn)
            .map(|d| -d)
            .or_else(|| self.increments.remove(&txn))
    }

    fn admissible(&self, committed: i64, constraint: Option<&Constraint>) -> bool {
        let low = self.worst_low(committed);
        let high = self.worst_high(committed);
        if low < i64::MIN as i128 || high > i64::MAX as i128 {
            return false;
        }
        match constraint {
            None => true,
            Some(c) => c.lower_ok(low as i64) && c.upper_ok(high as i64),
        }
    }

    /// Removes the grant of `txn` and returns its delta so the caller can
    /// apply it to the committed value.
    pub fn take(&mut self, txn: TxnId) -> Option<i64> {
        self.remove(txn)
    }

    /// Drops the grant of `txn` if present.
    pub fn release(&mut self, txn: TxnId) -> bool {
        self.remove(txn).is_some()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemanticError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("item {item} is class {class}, expected {expected}")]
    WrongClass {
        item: ItemId,
        class: CcClass,
        expected: CcClass,
    },
    #[error("reconciled value of {0} would violate its constraint")]
    Constraint(ItemId),
    #[error("transaction {txn} holds no escrow grant on {item}")]
    NoGrant { item: ItemId, txn: TxnId },
}

fn int_of(id: &ItemId, v: &Value, class: CcClass) -> Result<i64, SemanticError> {
    v.as_int().ok_or_else(|| {
        SemanticError::Store(StoreError::NonNumeric {
            item: id.clone(),
            class,
        })
    })
}

/// Applies a reconciled delta to an `R` item. The read version is informational:
/// a stale read does not abort, only a constraint violation does.
pub fn reconcile_commit(
    store: &Store,
    id: &ItemId,
    _txn_read_version: u64,
    delta: i64,
) -> Result<i64, SemanticError> {
    let slot = store.slot(id)?;
    let mut s = slot.write();
    if s.static_class != CcClass::R {
        return Err(SemanticError::WrongClass {
            item: id.clone(),
            class: s.static_class,
            expected: CcClass::R,
        });
    }
    let current = int_of(id, &s.value, s.static_class)?;
    let next = reconcile(current, delta, s.constraint.as_ref())
        .ok_or_else(|| SemanticError::Constraint(id.clone()))?;
    let (seq, min) = store.begin_commit();
    s.install(Value::Int(next), seq, min);
    Ok(next)
}

pub fn escrow_request(
    store: &Store,
    id: &ItemId,
    txn: TxnId,
    delta: i64,
) -> Result<EscrowDecision, SemanticError> {
    let slot = store.slot(id)?;
    let mut s = slot.write();
    if s.static_class != CcClass::E {
        return Err(SemanticError::WrongClass {
            item: id.clone(),
            class: s.static_class,
            expected: CcClass::E,
        });
    }
    let committed = int_of(id, &s.value, s.static_class)?;
    let constraint = s.constraint;
    Ok(s.escrow.request(committed, constraint.as_ref(), txn, delta))
}

/// Commits the reservation of `txn`. Cannot violate the constraint.
pub fn escrow_commit(store: &Store, id: &ItemId, txn: TxnId) -> Result<i64, SemanticError> {
    let slot = store.slot(id)?;
    let mut s = slot.write();
    let delta = s.escrow.take(txn).ok_or_else(|| SemanticError::NoGrant {
        item: id.clone(),
        txn,
    })?;
    let committed = int_of(id, &s.value, s.static_class)?;
    let next = committed + delta;
    debug_assert!(s.constraint.is_none_or(|c| c.satisfied(next)));
    let (seq, min) = store.begin_commit();
    s.install(Value::Int(next), seq, min);
    Ok(next)
}

pub fn escrow_release(store: &Store, id: &ItemId, txn: TxnId) -> Result<(), SemanticError> {
    let slot = store.slot(id)?;
    slot.write().escrow.release(txn);
    Ok(())
}
