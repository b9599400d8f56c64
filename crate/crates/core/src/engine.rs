//! Transaction engine: read paths per class, the commit pipeline, aborts, and
//! the hand-off to adaptation and observers.
//!
//! Calls never block. A read of a locked `P` item returns
//! [`ReadOutcome::Waiting`]; the engine later reports the grant (or the
//! withdrawal of the request when the item leaves `P`) through
//! [`Observer::on_wake`], after which the owner repeats the read.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::RwLock;
use thiserror::Error;

use crate::adapt::{AdaptError, Adapter, AdaptationConfig, Rule, Switch};
use crate::clock::Clock;
use crate::lock::{AcquireOutcome, LockManager, Release};
use crate::semantic::{reconcile, EscrowDecision};
use crate::store::{Slot, Store, StoreError};
use crate::trace::{Op, ScheduleEvent, Termination};
use crate::txn::{Phase, ReadEntry, Txn, WriteIntent};
use crate::types::{AbortReason, CcClass, ItemId, Millis, Outcome, TxnId, Value};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("transaction {txn} is {phase}, cannot {op}")]
    WrongPhase {
        txn: TxnId,
        phase: Phase,
        op: &'static str,
    },
    #[error("transaction {txn} is waiting for {item}")]
    Waiting { txn: TxnId, item: ItemId },
    #[error("transaction {txn} writes {item} without reading it")]
    BlindWrite { txn: TxnId, item: ItemId },
    #[error("read-only transaction {txn} cannot write {item}")]
    ReadOnlyWrite { txn: TxnId, item: ItemId },
    #[error("item {item} is class {class}; escrow reads need class E")]
    NotEscrow { item: ItemId, class: CcClass },
    #[error("write on escrow item {item} must equal the granted delta {granted:?}")]
    EscrowMismatch { item: ItemId, granted: Option<i64> },
    #[error("item {0} holds a non-numeric value")]
    NonNumeric(ItemId),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReadOutcome {
    Ready { value: Value, version: u64 },
    /// Queued behind the current lock holder.
    Waiting,
    /// The read terminated the transaction.
    Aborted(AbortReason),
}

/// Receives engine notifications. Called after the engine has released its
/// internal locks, from whichever thread made the triggering call.
pub trait Observer: Send + Sync {
    fn on_event(&self, _event: &ScheduleEvent) {}
    fn on_termination(&self, _t: &Termination) {}
    fn on_adaptation(&self, _s: &Switch) {}
    /// `txn` should repeat its pending read of `item`.
    fn on_wake(&self, _txn: TxnId, _item: &ItemId) {}
}

#[derive(Debug, Clone, Default)]
pub struct EngineConfig {
    /// `None` disables run-time adaptation.
    pub adaptation: Option<AdaptationConfig>,
    /// Optimistic reads of update transactions come from one snapshot taken
    /// at begin instead of the latest committed state.
    pub snapshot_reads: bool,
}

enum Notice {
    Event(ScheduleEvent),
    Termination(Termination),
    Switch(Switch),
    Wake(TxnId, ItemId),
}

type Notes = Vec<Notice>;

struct Installed {
    item: ItemId,
    class: CcClass,
    version: u64,
}

pub struct Engine {
    store: Arc<Store>,
    locks: LockManager,
    adapter: Option<Adapter>,
    clock: Arc<dyn Clock>,
    next_id: AtomicU64,
    observers: RwLock<Vec<Arc<dyn Observer>>>,
    snapshot_reads: bool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("items", &self.store.len())
            .field("next_id", &self.next_id)
            .field("adaptive", &self.adapter.is_some())
            .finish()
    }
}

impl Engine {
    /// Builds an engine over `store`. Every adaptable item already in the
    /// store gets a controller when adaptation is configured.
    pub fn new(store: Arc<Store>, clock: Arc<dyn Clock>, cfg: EngineConfig) -> Result<Self, EngineError> {
        let adapter = cfg.adaptation.map(Adapter::new).transpose()?;
        let engine = Self {
            store,
            locks: LockManager::new(),
            adapter,
            clock,
            next_id: AtomicU64::new(1),
            observers: RwLock::new(Vec::new()),
            snapshot_reads: cfg.snapshot_reads,
        };
        for id in engine.store.ids() {
            engine.track(&id)?;
        }
        Ok(engine)
    }

    /// Starts adaptation for an item created after the engine.
    pub fn track(&self, id: &ItemId) -> Result<(), EngineError> {
        let view = self.store.get(id)?;
        if let Some(a) = &self.adapter {
            if view.adaptable && !a.is_tracked(id) {
                a.register(id.clone(), view.current_class);
            }
        }
        Ok(())
    }

    pub fn add_observer(&self, o: Arc<dyn Observer>) {
        self.observers.write().push(o);
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn locks(&self) -> &LockManager {
        &self.locks
    }

    pub fn adapter(&self) -> Option<&Adapter> {
        self.adapter.as_ref()
    }

    pub fn now(&self) -> Millis {
        self.clock.now()
    }

    pub fn begin(&self, read_only: bool) -> Txn {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut t = Txn::new(id, read_only, self.clock.now());
        if read_only || self.snapshot_reads {
            t.snapshot = Some(self.store.register_snapshot());
        }
        t
    }

    pub fn read(&self, txn: &mut Txn, id: &ItemId) -> Result<ReadOutcome, EngineError> {
        let mut notes = Notes::new();
        let out = self.read_inner(txn, id, None, &mut notes);
        self.flush(notes);
        out
    }

    /// Reads an escrow item and requests a reservation of `delta`. A refused
    /// reservation aborts the transaction.
    pub fn read_escrow(&self, txn: &mut Txn, id: &ItemId, delta: i64) -> Result<ReadOutcome, EngineError> {
        let mut notes = Notes::new();
        let out = self.read_inner(txn, id, Some(delta), &mut notes);
        self.flush(notes);
        out
    }

    pub fn disconnect(&self, txn: &mut Txn) -> Result<(), EngineError> {
        self.expect_phase(txn, Phase::Reading, "disconnect")?;
        self.expect_not_waiting(txn)?;
        txn.phase = Phase::Disconnected;
        txn.disconnect_at = Some(self.clock.now());
        Ok(())
    }

    /// Hands over the complete write set. Every written item must have been
    /// read; escrow items may be omitted (their grant is applied anyway).
    pub fn submit(
        &self,
        txn: &mut Txn,
        writes: impl IntoIterator<Item = (ItemId, WriteIntent)>,
    ) -> Result<(), EngineError> {
        if !matches!(txn.phase, Phase::Reading | Phase::Disconnected) {
            return Err(EngineError::WrongPhase {
                txn: txn.id,
                phase: txn.phase,
                op: "submit writes",
            });
        }
        self.expect_not_waiting(txn)?;
        let mut set = std::collections::BTreeMap::new();
        for (id, intent) in writes {
            let Some(read) = txn.read_set.get(&id) else {
                return Err(EngineError::BlindWrite { txn: txn.id, item: id });
            };
            if txn.read_only {
                return Err(EngineError::ReadOnlyWrite { txn: txn.id, item: id });
            }
            let numeric = |v: &Value| v.as_int().ok_or_else(|| EngineError::NonNumeric(id.clone()));
            match read.class {
                CcClass::E => {
                    let granted = txn.escrow.get(&id).copied();
                    let delta = match &intent {
                        WriteIntent::Add(d) => Some(*d),
                        WriteIntent::Set(v) => Some(numeric(v)? - numeric(&read.value)?),
                    };
                    if granted.is_none() || delta != granted {
                        return Err(EngineError::EscrowMismatch { item: id, granted });
                    }
                }
                _ => match &intent {
                    WriteIntent::Add(_) => {
                        numeric(&read.value)?;
                    }
                    WriteIntent::Set(v) => {
                        if read.class == CcClass::R {
                            numeric(v)?;
                            numeric(&read.value)?;
                        }
                    }
                },
            }
            set.insert(id, intent);
        }
        let now = self.clock.now();
        txn.write_set = set;
        txn.phase = Phase::Writing;
        txn.write_submit = Some(now);
        txn.disconnect_at.get_or_insert(now);
        Ok(())
    }

    /// Runs the commit pipeline of a transaction in phase `Writing`.
    pub fn commit(&self, txn: &mut Txn) -> Result<Outcome, EngineError> {
        self.expect_phase(txn, Phase::Writing, "commit")?;
        let mut notes = Notes::new();
        let result = if txn.read_only {
            Ok(Vec::new())
        } else {
            self.apply(txn)?
        };
        let now = self.clock.now();
        let outcome = match result {
            Ok(installed) => {
                for i in installed {
                    notes.push(Notice::Event(ScheduleEvent::access(
                        now,
                        txn.id,
                        Op::Write,
                        i.item,
                        i.class,
                        i.version,
                    )));
                }
                Outcome::Commit
            }
            Err(reason) => Outcome::Abort(reason),
        };
        self.finish(txn, outcome, &mut notes);
        self.flush(notes);
        Ok(outcome)
    }

    /// `submit` followed by `commit`.
    pub fn submit_and_commit(
        &self,
        txn: &mut Txn,
        writes: impl IntoIterator<Item = (ItemId, WriteIntent)>,
    ) -> Result<Outcome, EngineError> {
        self.submit(txn, writes)?;
        self.commit(txn)
    }

    /// Aborts a live transaction. Returns false if it had already terminated.
    pub fn abort(&self, txn: &mut Txn, reason: AbortReason) -> bool {
        if txn.phase.is_terminal() {
            return false;
        }
        let mut notes = Notes::new();
        self.finish(txn, Outcome::Abort(reason), &mut notes);
        self.flush(notes);
        true
    }

    /// Closes the adaptation time window at the current clock time.
    pub fn tick(&self) -> Vec<Switch> {
        let Some(a) = &self.adapter else {
            return Vec::new();
        };
        let now = self.clock.now();
        let mut notes = Notes::new();
        let switches = a.tick(
            now,
            |id| self.locks.occupancy(id),
            |s| self.apply_switch(s, &mut notes),
        );
        self.flush(notes);
        switches
    }

    /// Moves an adaptable item to `to` outside the rules.
    pub fn reclassify(&self, id: &ItemId, to: CcClass) -> Result<Option<Switch>, EngineError> {
        let view = self.store.get(id)?;
        if !view.adaptable {
            return Err(StoreError::NotAdaptable {
                item: id.clone(),
                class: view.static_class,
            }
            .into());
        }
        if !matches!(to, CcClass::O | CcClass::P) {
            return Err(StoreError::InvalidTarget(to).into());
        }
        let now = self.clock.now();
        let mut notes = Notes::new();
        let switch = match self.adapter.as_ref().filter(|a| a.is_tracked(id)) {
            Some(a) => a.force(id, to, now, |s| self.apply_switch(s, &mut notes)),
            None if view.current_class == to => None,
            None => {
                let s = Switch {
                    time: now,
                    item: id.clone(),
                    from: view.current_class,
                    to,
                    cr: 1.0,
                    rt_est: 0.0,
                    rule: Rule::Manual,
                };
                self.apply_switch(&s, &mut notes);
                Some(s)
            }
        };
        self.flush(notes);
        Ok(switch)
    }

    fn expect_phase(&self, txn: &Txn, phase: Phase, op: &'static str) -> Result<(), EngineError> {
        if txn.phase == phase {
            Ok(())
        } else {
            Err(EngineError::WrongPhase {
                txn: txn.id,
                phase: txn.phase,
                op,
            })
        }
    }

    fn expect_not_waiting(&self, txn: &Txn) -> Result<(), EngineError> {
        match &txn.pending {
            Some(item) => Err(EngineError::Waiting {
                txn: txn.id,
                item: item.clone(),
            }),
            None => Ok(()),
        }
    }

    fn read_inner(
        &self,
        txn: &mut Txn,
        id: &ItemId,
        escrow: Option<i64>,
        notes: &mut Notes,
    ) -> Result<ReadOutcome, EngineError> {
        self.expect_phase(txn, Phase::Reading, "read")?;
        if let Some(p) = &txn.pending {
            if p != id {
                return Err(EngineError::Waiting {
                    txn: txn.id,
                    item: p.clone(),
                });
            }
        }
        if let Some(e) = txn.read_set.get(id) {
            if escrow.is_none() || txn.escrow.contains_key(id) {
                return Ok(ReadOutcome::Ready {
                    value: e.value.clone(),
                    version: e.version,
                });
            }
        }
        let slot = self.store.slot(id)?;
        let now = self.clock.now();

        if txn.read_only {
            if escrow.is_some() {
                return Err(EngineError::ReadOnlyWrite {
                    txn: txn.id,
                    item: id.clone(),
                });
            }
            let snap = txn.snapshot.expect("read-only snapshot");
            let (value, version, class) = {
                let s = slot.read();
                let (v, ver) = s.as_of(snap);
                (v, ver, s.current_class)
            };
            return Ok(self.deliver(txn, id, value, version, class, now, notes));
        }

        if txn.pending.as_ref() == Some(id) {
            if self.locks.holds(txn.id, id) {
                self.end_wait(txn, now);
                return Ok(self.granted(txn, id, &slot, now, notes));
            }
            if self.locks.waiting_on(txn.id).as_ref() == Some(id) {
                return Ok(ReadOutcome::Waiting);
            }
            // request withdrawn because the item left P
            self.end_wait(txn, now);
        }

        let class = slot.read().current_class;
        match (class, escrow) {
            (CcClass::P, _) if escrow.is_some() => Err(EngineError::NotEscrow {
                item: id.clone(),
                class,
            }),
            (CcClass::P, None) => match self.locks.acquire(txn.id, id) {
                AcquireOutcome::Granted => Ok(self.granted(txn, id, &slot, now, notes)),
                AcquireOutcome::Queued => {
                    txn.pending = Some(id.clone());
                    txn.wait_start = Some(now);
                    Ok(ReadOutcome::Waiting)
                }
                AcquireOutcome::DeadlockRefused => {
                    self.finish(txn, Outcome::Abort(AbortReason::Deadlock), notes);
                    Ok(ReadOutcome::Aborted(AbortReason::Deadlock))
                }
            },
            (CcClass::E, Some(delta)) => {
                let decision = {
                    let mut s = slot.write();
                    let committed = s.value.as_int().ok_or_else(|| EngineError::NonNumeric(id.clone()))?;
                    let constraint = s.constraint;
                    let d = s.escrow.request(committed, constraint.as_ref(), txn.id, delta);
                    (d, s.value.clone(), s.version)
                };
                match decision {
                    (EscrowDecision::Granted, value, version) => {
                        txn.escrow.insert(id.clone(), delta);
                        Ok(self.deliver(txn, id, value, version, CcClass::E, now, notes))
                    }
                    (EscrowDecision::Refused, ..) => {
                        self.finish(txn, Outcome::Abort(AbortReason::Constraint), notes);
                        Ok(ReadOutcome::Aborted(AbortReason::Constraint))
                    }
                }
            }
            (_, Some(_)) => Err(EngineError::NotEscrow {
                item: id.clone(),
                class,
            }),
            (_, None) => Ok(self.optimistic(txn, id, &slot, now, notes)),
        }
    }

    fn optimistic(&self, txn: &mut Txn, id: &ItemId, slot: &Slot, now: Millis, notes: &mut Notes) -> ReadOutcome {
        let (value, version, class) = {
            let s = slot.read();
            let (v, ver) = match txn.snapshot {
                Some(snap) => s.as_of(snap),
                None => (s.value.clone(), s.version),
            };
            (v, ver, s.current_class)
        };
        self.deliver(txn, id, value, version, class, now, notes)
    }

    /// Lock held: read under P, unless the item has left P meanwhile.
    fn granted(&self, txn: &mut Txn, id: &ItemId, slot: &Slot, now: Millis, notes: &mut Notes) -> ReadOutcome {
        let snapshot = {
            let s = slot.read();
            (s.current_class == CcClass::P).then(|| (s.value.clone(), s.version))
        };
        match snapshot {
            Some((value, version)) => {
                notes.push(Notice::Event(ScheduleEvent::lock(now, txn.id, id.clone())));
                self.deliver(txn, id, value, version, CcClass::P, now, notes)
            }
            None => {
                if let Ok(r) = self.locks.release(txn.id, id) {
                    self.wake_next(&r, notes);
                }
                self.optimistic(txn, id, slot, now, notes)
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn deliver(
        &self,
        txn: &mut Txn,
        id: &ItemId,
        value: Value,
        version: u64,
        class: CcClass,
        now: Millis,
        notes: &mut Notes,
    ) -> ReadOutcome {
        txn.first_read.get_or_insert(now);
        txn.read_set.insert(
            id.clone(),
            ReadEntry {
                value: value.clone(),
                version,
                class,
                time: now,
            },
        );
        notes.push(Notice::Event(ScheduleEvent::access(
            now,
            txn.id,
            Op::Read,
            id.clone(),
            class,
            version,
        )));
        ReadOutcome::Ready { value, version }
    }

    fn end_wait(&self, txn: &mut Txn, now: Millis) {
        if let Some(start) = txn.wait_start.take() {
            txn.lock_wait += (now - start).max(0.0);
        }
        txn.pending = None;
    }

    fn wake_next(&self, r: &Release, notes: &mut Notes) {
        if let Some(h) = r.next_holder {
            notes.push(Notice::Wake(h, r.item.clone()));
        }
    }

    /// Validation, reclassification check and installation, all under the
    /// write locks of every item in the read set, taken in id order.
    fn apply(&self, txn: &Txn) -> Result<Result<Vec<Installed>, AbortReason>, EngineError> {
        let ids: Vec<&ItemId> = txn.read_set.keys().collect();
        let slots = ids
            .iter()
            .map(|id| self.store.slot(id))
            .collect::<Result<Vec<_>, _>>()?;
        let mut guards: Vec<_> = slots.iter().map(|s| s.write()).collect();

        for (i, id) in ids.iter().enumerate() {
            let e = &txn.read_set[*id];
            let g = &guards[i];
            if e.class == CcClass::O && g.current_class == CcClass::O {
                if g.version != e.version {
                    return Ok(Err(AbortReason::Validation));
                }
                let foreign_holder = self.locks.holder(id).is_some_and(|h| h != txn.id);
                if foreign_holder && txn.write_set.contains_key(*id) {
                    return Ok(Err(AbortReason::Validation));
                }
            }
        }
        for (i, id) in ids.iter().enumerate() {
            if txn.read_set[*id].class == CcClass::O && guards[i].current_class == CcClass::P {
                return Ok(Err(AbortReason::Reclassification));
            }
        }

        let int = |id: &ItemId, v: &Value| v.as_int().ok_or_else(|| EngineError::NonNumeric(id.clone()));
        let mut pending: Vec<(usize, Value, bool)> = Vec::new();
        for (i, id) in ids.iter().enumerate() {
            let id = *id;
            let e = &txn.read_set[id];
            let g = &guards[i];
            match g.static_class {
                CcClass::E => {
                    if let Some(&d) = txn.escrow.get(id) {
                        if g.escrow.granted(txn.id) != Some(d) {
                            return Ok(Err(AbortReason::Constraint));
                        }
                        let next = int(id, &g.value)?
                            .checked_add(d)
                            .ok_or(AbortReason::Constraint);
                        match next {
                            Ok(v) => pending.push((i, Value::Int(v), true)),
                            Err(r) => return Ok(Err(r)),
                        }
                    }
                }
                CcClass::R => {
                    if let Some(intent) = txn.write_set.get(id) {
                        let delta = match intent {
                            WriteIntent::Add(d) => Some(*d),
                            WriteIntent::Set(v) => int(id, v)?.checked_sub(int(id, &e.value)?),
                        };
                        let current = int(id, &g.value)?;
                        match delta.and_then(|d| reconcile(current, d, g.constraint.as_ref())) {
                            Some(v) => pending.push((i, Value::Int(v), false)),
                            None => return Ok(Err(AbortReason::Constraint)),
                        }
                    }
                }
                CcClass::O | CcClass::P => {
                    if let Some(intent) = txn.write_set.get(id) {
                        let next = match intent {
                            WriteIntent::Set(v) => v.clone(),
                            WriteIntent::Add(d) => match int(id, &e.value)?.checked_add(*d) {
                                Some(v) => Value::Int(v),
                                None => return Ok(Err(AbortReason::Constraint)),
                            },
                        };
                        if g.check(&next).is_err() {
                            return Ok(Err(AbortReason::Constraint));
                        }
                        pending.push((i, next, false));
                    }
                }
            }
        }

        let mut installed = Vec::with_capacity(pending.len());
        if !pending.is_empty() {
            let (seq, min) = self.store.begin_commit();
            for (i, value, escrowed) in pending {
                let g = &mut guards[i];
                if escrowed {
                    g.escrow.take(txn.id);
                }
                let version = g.install(value, seq, min);
                installed.push(Installed {
                    item: ids[i].clone(),
                    class: g.current_class,
                    version,
                });
            }
        }
        Ok(Ok(installed))
    }

    fn finish(&self, txn: &mut Txn, outcome: Outcome, notes: &mut Notes) {
        let now = self.clock.now();
        self.end_wait(txn, now);
        txn.phase = if outcome.is_commit() {
            Phase::Committed
        } else {
            Phase::Aborted
        };
        txn.termination = Some(now);
        txn.abort_reason = outcome.reason();

        for id in txn.escrow.keys() {
            if let Ok(slot) = self.store.slot(id) {
                slot.write().escrow.release(txn.id);
            }
        }
        if let Some(s) = txn.snapshot.take() {
            self.store.release_snapshot(s);
        }
        let releases = self.locks.release_all(txn.id);
        for r in &releases {
            self.wake_next(r, notes);
        }

        let response = now - txn.arrival;
        let service = (response - txn.lock_wait - txn.disconnect_time()).max(0.0);
        let term = Termination {
            txn: txn.id,
            arrival: txn.arrival,
            time: now,
            outcome,
            service_time: service,
            read_only: txn.read_only,
            items: txn.read_set.iter().map(|(k, e)| (k.clone(), e.class)).collect(),
        };
        notes.push(Notice::Event(ScheduleEvent::termination(&term)));
        notes.push(Notice::Termination(term));

        if let Some(a) = &self.adapter {
            for (id, e) in &txn.read_set {
                let st = match (e.class, txn.write_submit) {
                    (CcClass::P, Some(w)) => Some((w - e.time).max(0.0)),
                    _ => None,
                };
                let q = releases.iter().find(|r| &r.item == id).map(|r| r.queue_len);
                a.record(
                    id,
                    now,
                    outcome,
                    st,
                    q,
                    || self.locks.occupancy(id),
                    |s| self.apply_switch(s, notes),
                );
            }
        }
    }

    fn apply_switch(&self, s: &Switch, notes: &mut Notes) {
        // the controller only tracks adaptable items, so this cannot fail
        let _ = self.store.set_current_class(&s.item, s.to);
        if s.to == CcClass::O {
            for w in self.locks.withdraw_waiters(&s.item) {
                notes.push(Notice::Wake(w, s.item.clone()));
            }
        }
        notes.push(Notice::Switch(s.clone()));
    }

    fn flush(&self, notes: Notes) {
        if notes.is_empty() {
            return;
        }
        let observers = self.observers.read().clone();
        for n in &notes {
            for o in &observers {
                match n {
                    Notice::Event(e) => o.on_event(e),
                    Notice::Termination(t) => o.on_termination(t),
                    Notice::Switch(s) => o.on_adaptation(s),
                    Notice::Wake(t, i) => o.on_wake(*t, i),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::store::Constraint;
    use crate::types::item;
    use parking_lot::Mutex;

    #[derive(Default)]
    struct Recorder {
        events: Mutex<Vec<ScheduleEvent>>,
        wakes: Mutex<Vec<(TxnId, ItemId)>>,
    }

    impl Observer for Recorder {
        fn on_event(&self, e: &ScheduleEvent) {
            self.events.lock().push(e.clone());
        }
        fn on_wake(&self, t: TxnId, i: &ItemId) {
            self.wakes.lock().push((t, i.clone()));
        }
    }

    fn setup(items: &[(&str, i64, CcClass, Option<Constraint>)]) -> (Engine, Arc<VirtualClock>, Arc<Recorder>) {
        let store = Arc::new(Store::new());
        for (k, v, c, con) in items {
            store.create_item(item(k), *v, *c, *con).unwrap();
        }
        let clock = Arc::new(VirtualClock::new());
        let e = Engine::new(store, clock.clone(), EngineConfig::default()).unwrap();
        let rec = Arc::new(Recorder::default());
        e.add_observer(rec.clone());
        (e, clock, rec)
    }

    fn ready(o: ReadOutcome) -> (Value, u64) {
        match o {
            ReadOutcome::Ready { value, version } => (value, version),
            other => panic!("expected ready, got {other:?}"),
        }
    }

    #[test]
    fn begin_assigns_distinct_ids() {
        let (e, ..) = setup(&[]);
        let a = e.begin(false);
        let b = e.begin(true);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.phase(), Phase::Reading);
        assert!(b.read_only());
    }

    #[test]
    fn optimistic_read_records_version() {
        let (e, ..) = setup(&[("x", 10, CcClass::O, None)]);
        let mut t = e.begin(false);
        assert_eq!(ready(e.read(&mut t, &item("x")).unwrap()), (Value::Int(10), 1));
        assert_eq!(t.read_set()[&item("x")].class, CcClass::O);
        assert!(e.locks().holder(&item("x")).is_none());
    }

    #[test]
    fn schedule_with_read_validation_aborts_late_writer() {
        let (e, ..) = setup(&[("o", 1, CcClass::O, None), ("p", 1, CcClass::P, None)]);
        let (o, p) = (item("o"), item("p"));
        let mut ti = e.begin(false);
        let mut tj = e.begin(false);
        e.read(&mut ti, &o).unwrap();
        e.read(&mut ti, &p).unwrap();
        // j's read of p queues behind i; j reads o meanwhile is not possible
        // while queued, so j reads o first
        e.read(&mut tj, &o).unwrap();
        assert_eq!(e.read(&mut tj, &p).unwrap(), ReadOutcome::Waiting);
        let mut tk = e.begin(false);
        e.read(&mut tk, &o).unwrap();
        assert_eq!(
            e.submit_and_commit(&mut tk, [(o.clone(), WriteIntent::Add(1))]).unwrap(),
            Outcome::Commit
        );
        // i read o under O before k overwrote it: its write on p must abort
        assert_eq!(
            e.submit_and_commit(&mut ti, [(p.clone(), WriteIntent::Add(1))]).unwrap(),
            Outcome::Abort(AbortReason::Validation)
        );
        assert_eq!(e.store().read_committed(&p).unwrap(), (Value::Int(1), 1));
    }

    #[test]
    fn p_read_waits_then_wakes() {
        let (e, _, rec) = setup(&[("p", 5, CcClass::P, None)]);
        let p = item("p");
        let mut a = e.begin(false);
        let mut b = e.begin(false);
        ready(e.read(&mut a, &p).unwrap());
        assert_eq!(e.read(&mut b, &p).unwrap(), ReadOutcome::Waiting);
        assert_eq!(e.read(&mut b, &p).unwrap(), ReadOutcome::Waiting);
        assert!(e.disconnect(&mut b).is_err());
        e.submit_and_commit(&mut a, [(p.clone(), WriteIntent::Set(Value::Int(6)))])
            .unwrap();
        assert_eq!(rec.wakes.lock().as_slice(), &[(b.id(), p.clone())]);
        assert_eq!(ready(e.read(&mut b, &p).unwrap()), (Value::Int(6), 2));
        assert!(e.locks().holds(b.id(), &p));
    }

    #[test]
    fn deadlock_aborts_requester() {
        let (e, ..) = setup(&[("x", 0, CcClass::P, None), ("y", 0, CcClass::P, None)]);
        let (x, y) = (item("x"), item("y"));
        let mut t1 = e.begin(false);
        let mut t2 = e.begin(false);
        ready(e.read(&mut t1, &x).unwrap());
        ready(e.read(&mut t2, &y).unwrap());
        assert_eq!(e.read(&mut t1, &y).unwrap(), ReadOutcome::Waiting);
        assert_eq!(
            e.read(&mut t2, &x).unwrap(),
            ReadOutcome::Aborted(AbortReason::Deadlock)
        );
        assert_eq!(t2.phase(), Phase::Aborted);
        // t2's lock on y went to t1
        assert!(e.locks().holds(t1.id(), &y));
    }

    #[test]
    fn escrow_read_grants_and_refuses() {
        let (e, ..) = setup(&[("s", 10, CcClass::E, Some(Constraint::greater_than(0)))]);
        let s = item("s");
        let mut a = e.begin(false);
        let mut b = e.begin(false);
        let mut c = e.begin(false);
        ready(e.read_escrow(&mut a, &s, -4).unwrap());
        ready(e.read_escrow(&mut b, &s, -5).unwrap());
        assert_eq!(
            e.read_escrow(&mut c, &s, -3).unwrap(),
            ReadOutcome::Aborted(AbortReason::Constraint)
        );
        let mut d = e.begin(false);
        ready(e.read_escrow(&mut d, &s, 5).unwrap());
        assert!(e.abort(&mut b, AbortReason::Validation));
        let mut f = e.begin(false);
        ready(e.read_escrow(&mut f, &s, -3).unwrap());
        assert_eq!(e.submit_and_commit(&mut a, []).unwrap(), Outcome::Commit);
        assert_eq!(e.store().read_committed(&s).unwrap().0, Value::Int(6));
    }

    #[test]
    fn reconciled_deltas_both_commit() {
        let (e, ..) = setup(&[("acct", 10, CcClass::R, None)]);
        let acct = item("acct");
        let mut a = e.begin(false);
        let mut b = e.begin(false);
        e.read(&mut a, &acct).unwrap();
        e.read(&mut b, &acct).unwrap();
        let sa = e.submit_and_commit(&mut a, [(acct.clone(), WriteIntent::Set(Value::Int(30)))]);
        let sb = e.submit_and_commit(&mut b, [(acct.clone(), WriteIntent::Set(Value::Int(0)))]);
        assert_eq!((sa.unwrap(), sb.unwrap()), (Outcome::Commit, Outcome::Commit));
        assert_eq!(e.store().read_committed(&acct).unwrap(), (Value::Int(20), 3));
    }

    #[test]
    fn phase_rules() {
        let (e, ..) = setup(&[("x", 1, CcClass::O, None), ("y", 1, CcClass::O, None)]);
        let (x, y) = (item("x"), item("y"));
        let mut t = e.begin(false);
        e.read(&mut t, &x).unwrap();
        e.disconnect(&mut t).unwrap();
        assert!(matches!(e.disconnect(&mut t), Err(EngineError::WrongPhase { .. })));
        assert!(matches!(e.read(&mut t, &y), Err(EngineError::WrongPhase { .. })));
        assert!(matches!(
            e.submit(&mut t, [(y.clone(), WriteIntent::Add(1))]),
            Err(EngineError::BlindWrite { .. })
        ));
        e.submit(&mut t, []).unwrap();
        assert_eq!(e.commit(&mut t).unwrap(), Outcome::Commit);
        assert!(!e.abort(&mut t, AbortReason::Validation));
    }

    #[test]
    fn read_only_sees_begin_snapshot() {
        let (e, ..) = setup(&[("x", 1, CcClass::O, None), ("y", 1, CcClass::O, None)]);
        let (x, y) = (item("x"), item("y"));
        let mut ro = e.begin(true);
        e.read(&mut ro, &x).unwrap();
        let mut w = e.begin(false);
        e.read(&mut w, &x).unwrap();
        e.read(&mut w, &y).unwrap();
        e.submit_and_commit(&mut w, [(x.clone(), WriteIntent::Add(1)), (y.clone(), WriteIntent::Add(1))])
            .unwrap();
        assert_eq!(ready(e.read(&mut ro, &y).unwrap()), (Value::Int(1), 1));
        assert!(matches!(
            e.submit(&mut ro, [(x.clone(), WriteIntent::Add(1))]),
            Err(EngineError::ReadOnlyWrite { .. })
        ));
        assert_eq!(e.submit_and_commit(&mut ro, []).unwrap(), Outcome::Commit);
    }

    #[test]
    fn optimistic_reader_of_reclassified_item_aborts() {
        let (e, ..) = setup(&[("x", 1, CcClass::O, None)]);
        let x = item("x");
        let mut t = e.begin(false);
        e.read(&mut t, &x).unwrap();
        e.reclassify(&x, CcClass::P).unwrap().unwrap();
        assert_eq!(
            e.submit_and_commit(&mut t, [(x.clone(), WriteIntent::Add(1))]).unwrap(),
            Outcome::Abort(AbortReason::Reclassification)
        );
    }

    #[test]
    fn locked_reader_survives_switch_to_optimistic() {
        let (e, _, rec) = setup(&[("x", 1, CcClass::O, None)]);
        let x = item("x");
        e.reclassify(&x, CcClass::P).unwrap();
        let mut holder = e.begin(false);
        let mut waiter = e.begin(false);
        ready(e.read(&mut holder, &x).unwrap());
        assert_eq!(e.read(&mut waiter, &x).unwrap(), ReadOutcome::Waiting);
        e.reclassify(&x, CcClass::O).unwrap();
        assert_eq!(rec.wakes.lock().as_slice(), &[(waiter.id(), x.clone())]);
        // the withdrawn waiter now reads optimistically
        ready(e.read(&mut waiter, &x).unwrap());
        assert_eq!(waiter.read_set()[&x].class, CcClass::O);
        // an optimistic writer cannot slip in while the holder still owns x
        assert_eq!(
            e.submit_and_commit(&mut waiter, [(x.clone(), WriteIntent::Add(5))]).unwrap(),
            Outcome::Abort(AbortReason::Validation)
        );
        assert_eq!(
            e.submit_and_commit(&mut holder, [(x.clone(), WriteIntent::Add(1))]).unwrap(),
            Outcome::Commit
        );
        assert_eq!(e.store().read_committed(&x).unwrap(), (Value::Int(2), 2));
    }

    #[test]
    fn abort_installs_nothing_and_frees_escrow() {
        let (e, ..) = setup(&[
            ("x", 1, CcClass::O, None),
            ("s", 10, CcClass::E, Some(Constraint::greater_than(0))),
        ]);
        let (x, s) = (item("x"), item("s"));
        let mut t = e.begin(false);
        e.read(&mut t, &x).unwrap();
        e.read_escrow(&mut t, &s, -9).unwrap();
        let mut other = e.begin(false);
        e.read(&mut other, &x).unwrap();
        e.submit_and_commit(&mut other, [(x.clone(), WriteIntent::Add(1))]).unwrap();
        assert_eq!(
            e.submit_and_commit(&mut t, [(x.clone(), WriteIntent::Add(1))]).unwrap(),
            Outcome::Abort(AbortReason::Validation)
        );
        assert_eq!(e.store().read_committed(&s).unwrap(), (Value::Int(10), 1));
        let mut again = e.begin(false);
        ready(e.read_escrow(&mut again, &s, -9).unwrap());
    }

    #[test]
    fn escrow_write_must_match_grant() {
        let (e, ..) = setup(&[("s", 10, CcClass::E, None)]);
        let s = item("s");
        let mut t = e.begin(false);
        e.read_escrow(&mut t, &s, -2).unwrap();
        assert!(matches!(
            e.submit(&mut t, [(s.clone(), WriteIntent::Add(-3))]),
            Err(EngineError::EscrowMismatch { .. })
        ));
        e.submit(&mut t, [(s.clone(), WriteIntent::Add(-2))]).unwrap();
        assert_eq!(e.commit(&mut t).unwrap(), Outcome::Commit);
        assert_eq!(e.store().read_committed(&s).unwrap(), (Value::Int(8), 2));
    }

    #[test]
    fn events_carry_versions() {
        let (e, clock, rec) = setup(&[("x", 1, CcClass::O, None)]);
        let x = item("x");
        let mut t = e.begin(false);
        clock.set(3.0);
        e.read(&mut t, &x).unwrap();
        clock.set(7.5);
        e.submit_and_commit(&mut t, [(x.clone(), WriteIntent::Add(1))]).unwrap();
        let lines: Vec<_> = rec.events.lock().iter().map(ScheduleEvent::to_line).collect();
        assert_eq!(lines[0], "3,1,r,x,O:1");
        assert_eq!(lines[1], "7,1,w,x,O:2");
        assert_eq!(lines[2], "7,1,c,,arrival=0;end=7.5;service=7.5");
    }
}
