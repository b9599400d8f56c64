//! Asynchronous front end: read requests, write-set submissions and aborts
//! travel on three separate lanes served by worker threads, and results come
//! back through completion callbacks.
//!
//! A read that has to wait for a lock does not occupy a worker. The request
//! is parked and put back on the read lane when the engine reports the grant
//! (or the withdrawal of the request). A wake that overtakes the parking is
//! remembered so the request is re-queued as soon as it is parked.

use std::collections::{HashMap, HashSet};
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{unbounded, Receiver, Sender};
use parking_lot::Mutex;

use crate::engine::{Engine, EngineError, Observer, ReadOutcome};
use crate::txn::{Txn, WriteIntent};
use crate::types::{AbortReason, ItemId, Outcome, TxnId};

pub type ReadCallback = Box<dyn FnOnce(Txn, Result<ReadOutcome, EngineError>) + Send>;
pub type CommitCallback = Box<dyn FnOnce(Txn, Result<Outcome, EngineError>) + Send>;
pub type AbortCallback = Box<dyn FnOnce(Txn, bool) + Send>;

struct ReadReq {
    txn: Txn,
    item: ItemId,
    escrow: Option<i64>,
    cb: ReadCallback,
}

struct WriteReq {
    txn: Txn,
    writes: Vec<(ItemId, WriteIntent)>,
    cb: CommitCallback,
}

struct AbortReq {
    txn: Txn,
    reason: AbortReason,
    cb: AbortCallback,
}

enum Msg<T> {
    Req(T),
    Stop,
}

#[derive(Default)]
struct ParkState {
    parked: HashMap<TxnId, ReadReq>,
    early: HashSet<TxnId>,
}

struct Parking {
    state: Mutex<ParkState>,
    reads: Sender<Msg<ReadReq>>,
}

impl Parking {
    fn park(&self, req: ReadReq) {
        let mut s = self.state.lock();
        if s.early.remove(&req.txn.id()) {
            drop(s);
            let _ = self.reads.send(Msg::Req(req));
        } else {
            s.parked.insert(req.txn.id(), req);
        }
    }
}

struct WakeRouter(Arc<Parking>);

impl Observer for WakeRouter {
    fn on_wake(&self, txn: TxnId, _item: &ItemId) {
        let mut s = self.0.state.lock();
        match s.parked.remove(&txn) {
            Some(req) => {
                drop(s);
                let _ = self.0.reads.send(Msg::Req(req));
            }
            None => {
                s.early.insert(txn);
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LaneConfig {
    pub read_workers: usize,
    pub write_workers: usize,
}

impl Default for LaneConfig {
    fn default() -> Self {
        Self {
            read_workers: 4,
            write_workers: 2,
        }
    }
}

pub struct Lanes {
    engine: Arc<Engine>,
    reads: Sender<Msg<ReadReq>>,
    writes: Sender<Msg<WriteReq>>,
    aborts: Sender<Msg<AbortReq>>,
    parking: Arc<Parking>,
    workers: Vec<JoinHandle<()>>,
    counts: LaneConfig,
}

impl Lanes {
    pub fn start(engine: Arc<Engine>, cfg: LaneConfig) -> Self {
        let (rtx, rrx) = unbounded::<Msg<ReadReq>>();
        let (wtx, wrx) = unbounded::<Msg<WriteReq>>();
        let (atx, arx) = unbounded::<Msg<AbortReq>>();
        let parking = Arc::new(Parking {
            state: Mutex::new(ParkState::default()),
            reads: rtx.clone(),
        });
        engine.add_observer(Arc::new(WakeRouter(parking.clone())));

        let mut workers = Vec::new();
        for _ in 0..cfg.read_workers.max(1) {
            let (e, rx, p) = (engine.clone(), rrx.clone(), parking.clone());
            workers.push(std::thread::spawn(move || read_loop(&e, &rx, &p)));
        }
        for _ in 0..cfg.write_workers.max(1) {
            let (e, rx) = (engine.clone(), wrx.clone());
            workers.push(std::thread::spawn(move || write_loop(&e, &rx)));
        }
        {
            let e = engine.clone();
            workers.push(std::thread::spawn(move || abort_loop(&e, &arx)));
        }
        Self {
            engine,
            reads: rtx,
            writes: wtx,
            aborts: atx,
            parking,
            workers,
            counts: LaneConfig {
                read_workers: cfg.read_workers.max(1),
                write_workers: cfg.write_workers.max(1),
            },
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn read(&self, txn: Txn, item: ItemId, cb: impl FnOnce(Txn, Result<ReadOutcome, EngineError>) + Send + 'static) {
        let _ = self.reads.send(Msg::Req(ReadReq {
            txn,
            item,
            escrow: None,
            cb: Box::new(cb),
        }));
    }

    pub fn read_escrow(
        &self,
        txn: Txn,
        item: ItemId,
        delta: i64,
        cb: impl FnOnce(Txn, Result<ReadOutcome, EngineError>) + Send + 'static,
    ) {
        let _ = self.reads.send(Msg::Req(ReadReq {
            txn,
            item,
            escrow: Some(delta),
            cb: Box::new(cb),
        }));
    }

    /// Submits the write set and runs the commit pipeline.
    pub fn write(
        &self,
        txn: Txn,
        writes: Vec<(ItemId, WriteIntent)>,
        cb: impl FnOnce(Txn, Result<Outcome, EngineError>) + Send + 'static,
    ) {
        let _ = self.writes.send(Msg::Req(WriteReq {
            txn,
            writes,
            cb: Box::new(cb),
        }));
    }

    pub fn abort(&self, txn: Txn, reason: AbortReason, cb: impl FnOnce(Txn, bool) + Send + 'static) {
        let _ = self.aborts.send(Msg::Req(AbortReq {
            txn,
            reason,
            cb: Box::new(cb),
        }));
    }

    /// Number of reads currently parked behind locks.
    pub fn parked(&self) -> usize {
        self.parking.state.lock().parked.len()
    }

    /// Stops all workers after the requests already queued on each lane.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.counts.read_workers {
            let _ = self.reads.send(Msg::Stop);
        }
        for _ in 0..self.counts.write_workers {
            let _ = self.writes.send(Msg::Stop);
        }
        let _ = self.aborts.send(Msg::Stop);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for Lanes {
    fn drop(&mut self) {
        self.stop();
    }
}

fn read_loop(engine: &Engine, rx: &Receiver<Msg<ReadReq>>, parking: &Parking) {
    while let Ok(Msg::Req(mut req)) = rx.recv() {
        let out = match req.escrow {
            Some(d) => engine.read_escrow(&mut req.txn, &req.item, d),
            None => engine.read(&mut req.txn, &req.item),
        };
        match out {
            Ok(ReadOutcome::Waiting) => parking.park(req),
            other => (req.cb)(req.txn, other),
        }
    }
}

fn write_loop(engine: &Engine, rx: &Receiver<Msg<WriteReq>>) {
    while let Ok(Msg::Req(mut req)) = rx.recv() {
        let out = engine.submit_and_commit(&mut req.txn, req.writes);
        (req.cb)(req.txn, out);
    }
}

fn abort_loop(engine: &Engine, rx: &Receiver<Msg<AbortReq>>) {
    while let Ok(Msg::Req(mut req)) = rx.recv() {
        let done = engine.abort(&mut req.txn, req.reason);
        (req.cb)(req.txn, done);
    }
}
