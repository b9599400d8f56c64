//! In-memory transaction engine with four per-item concurrency-control
//! classes and run-time O/P adaptation.
//!
//! | class | mechanism | winner |
//! |-------|-----------|--------|
//! | `O` | snapshot read, version validation at commit | first committer |
//! | `R` | delta replay against the latest value at commit | all that keep the constraint |
//! | `P` | exclusive lock taken at read time | first reader |
//! | `E` | escrow reservation granted at read time | all granted readers |
//!
//! [`engine::Engine`] is the synchronous core; [`lanes::Lanes`] wraps it in an
//! asynchronous request/callback interface. [`harness`] drives experiments in
//! virtual or real time and [`metrics`] turns the resulting events into
//! reports.

pub mod adapt;
pub mod classify;
pub mod clock;
pub mod engine;
pub mod harness;
pub mod lanes;
pub mod lock;
pub mod metrics;
pub mod par;
pub mod semantic;
pub mod sg;
pub mod store;
pub mod trace;
pub mod txn;
pub mod types;

pub use engine::{Engine, EngineConfig, EngineError, Observer, ReadOutcome};
pub use store::{Constraint, Store};
pub use txn::{Phase, Txn, WriteIntent};
pub use types::{item, AbortReason, CcClass, ItemId, Millis, Outcome, TxnId, Value};
