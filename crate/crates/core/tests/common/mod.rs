//! Randomized workload drivers and independent oracles shared by the
//! integration and acceptance tests.

#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use parking_lot::Mutex;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orpe::clock::VirtualClock;
use orpe::metrics::Collector;
use orpe::sg::SerializationGraph;
use orpe::trace::ScheduleEvent;
use orpe::{
    item, AbortReason, CcClass, Constraint, Engine, EngineConfig, ItemId, Observer, Outcome, ReadOutcome, Store, Txn,
    TxnId, Value, WriteIntent,
};

#[derive(Default)]
pub struct Wakes(Mutex<Vec<TxnId>>);

impl Wakes {
    pub fn take(&self) -> Vec<TxnId> {
        std::mem::take(&mut *self.0.lock())
    }
}

impl Observer for Wakes {
    fn on_wake(&self, txn: TxnId, _item: &ItemId) {
        self.0.lock().push(txn);
    }
}

pub struct Rig {
    pub engine: Engine,
    pub clock: Arc<VirtualClock>,
    pub wakes: Arc<Wakes>,
    pub collector: Arc<Collector>,
}

impl Rig {
    pub fn new(store: Store, snapshot_reads: bool) -> Self {
        let clock = Arc::new(VirtualClock::new());
        let engine = Engine::new(
            Arc::new(store),
            clock.clone(),
            EngineConfig {
                adaptation: None,
                snapshot_reads,
            },
        )
        .expect("engine");
        let wakes = Arc::new(Wakes::default());
        let collector = Collector::new();
        engine.add_observer(wakes.clone());
        engine.add_observer(collector.clone());
        Self {
            engine,
            clock,
            wakes,
            collector,
        }
    }
}

// ---------------------------------------------------------------------------
// mixed O/P micro-workloads

#[derive(Debug, Clone)]
pub struct MicroTxn {
    pub read_only: bool,
    pub reads: Vec<usize>,
    /// Indexes into `reads` that are also written.
    pub writes: Vec<usize>,
    pub relative: bool,
}

#[derive(Debug, Clone)]
pub struct MicroWorkload {
    /// Static class per item; `O` items may be reclassified during the run.
    pub classes: Vec<CcClass>,
    pub txns: Vec<MicroTxn>,
    pub snapshot_reads: bool,
    /// Probability of a manual O/P flip of a random adaptable item per step.
    pub flip: f64,
    pub seed: u64,
}

pub fn micro_workload(seed: u64) -> MicroWorkload {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_items = rng.random_range(1..=4);
    let classes = (0..n_items)
        .map(|_| if rng.random_bool(0.5) { CcClass::O } else { CcClass::P })
        .collect();
    let n_txns = rng.random_range(2..=8);
    let txns = (0..n_txns)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n_items).collect();
            idx.shuffle(&mut rng);
            let k = rng.random_range(1..=n_items.min(3));
            let reads: Vec<usize> = idx[..k].to_vec();
            let read_only = rng.random_bool(0.2);
            let writes = if read_only {
                Vec::new()
            } else {
                (0..k).filter(|_| rng.random_bool(0.6)).collect()
            };
            MicroTxn {
                read_only,
                reads,
                writes,
                relative: rng.random_bool(0.5),
            }
        })
        .collect();
    MicroWorkload {
        classes,
        txns,
        snapshot_reads: rng.random_bool(0.3),
        flip: if rng.random_bool(0.5) { 0.15 } else { 0.0 },
        seed,
    }
}

#[derive(Debug)]
pub struct MicroResult {
    pub events: Vec<ScheduleEvent>,
    pub outcomes: Vec<Outcome>,
    pub flips: usize,
}

fn item_name(i: usize) -> ItemId {
    item(&format!("i{i}"))
}

/// Runs the workload with a random interleaving of single steps. A step is
/// one read, or the submit and commit of the whole write set.
pub fn run_micro(w: &MicroWorkload) -> Result<MicroResult, String> {
    let store = Store::new();
    for (i, c) in w.classes.iter().enumerate() {
        store.create_item(item_name(i), 0, *c, None).map_err(|e| e.to_string())?;
    }
    let rig = Rig::new(store, w.snapshot_reads);
    let mut rng = ChaCha8Rng::seed_from_u64(w.seed ^ 0x5eed);
    struct S {
        txn: Txn,
        next: usize,
        waiting: bool,
        done: bool,
    }
    let mut ss: Vec<S> = w
        .txns
        .iter()
        .map(|t| S {
            txn: rig.engine.begin(t.read_only),
            next: 0,
            waiting: false,
            done: false,
        })
        .collect();
    let adaptable: Vec<usize> = (0..w.classes.len()).filter(|&i| w.classes[i] == CcClass::O).collect();
    let mut flips = 0;
    let mut t = 0.0;
    loop {
        for id in rig.wakes.take() {
            if let Some(s) = ss.iter_mut().find(|s| s.txn.id() == id) {
                s.waiting = false;
            }
        }
        for s in ss.iter_mut().filter(|s| !s.done) {
            if s.txn.phase().is_terminal() {
                s.done = true;
            }
        }
        let runnable: Vec<usize> = (0..ss.len()).filter(|&i| !ss[i].done && !ss[i].waiting).collect();
        let Some(&k) = runnable.choose(&mut rng) else {
            if ss.iter().all(|s| s.done) {
                break;
            }
            return Err(format!("stalled in workload {}", w.seed));
        };
        t += 1.0;
        rig.clock.set(t);
        let spec = &w.txns[k];
        let s = &mut ss[k];
        if s.next < spec.reads.len() {
            match rig.engine.read(&mut s.txn, &item_name(spec.reads[s.next])).map_err(|e| e.to_string())? {
                ReadOutcome::Ready { .. } => s.next += 1,
                ReadOutcome::Waiting => s.waiting = true,
                ReadOutcome::Aborted(_) => s.done = true,
            }
        } else {
            let writes: Vec<(ItemId, WriteIntent)> = spec
                .writes
                .iter()
                .map(|&j| {
                    let intent = if spec.relative {
                        WriteIntent::Add(1)
                    } else {
                        WriteIntent::Set(Value::Int(s.txn.id() as i64 * 100 + j as i64))
                    };
                    (item_name(spec.reads[j]), intent)
                })
                .collect();
            rig.engine
                .submit_and_commit(&mut s.txn, writes)
                .map_err(|e| e.to_string())?;
            s.done = true;
        }
        if has_cycle(&rig.engine.locks().wfg_edges()) {
            return Err(format!("wait-for cycle in workload {}", w.seed));
        }
        if !adaptable.is_empty() && w.flip > 0.0 && rng.random_bool(w.flip) {
            let id = item_name(*adaptable.choose(&mut rng).expect("non-empty"));
            let to = match rig.engine.store().current_class(&id).map_err(|e| e.to_string())? {
                CcClass::O => CcClass::P,
                _ => CcClass::O,
            };
            if rig.engine.reclassify(&id, to).map_err(|e| e.to_string())?.is_some() {
                flips += 1;
            }
        }
    }
    let outcomes = ss
        .iter()
        .map(|s| match s.txn.abort_reason() {
            Some(r) => Outcome::Abort(r),
            None => Outcome::Commit,
        })
        .collect();
    Ok(MicroResult {
        events: rig.collector.drain().events,
        outcomes,
        flips,
    })
}

pub fn has_cycle(edges: &[(TxnId, TxnId)]) -> bool {
    use std::collections::HashMap;
    let mut adj: HashMap<TxnId, Vec<TxnId>> = HashMap::new();
    for &(a, b) in edges {
        adj.entry(a).or_default().push(b);
    }
    // 0 unvisited, 1 on stack, 2 finished
    fn visit(n: TxnId, adj: &HashMap<TxnId, Vec<TxnId>>, state: &mut HashMap<TxnId, u8>) -> bool {
        match state.get(&n) {
            Some(1) => return true,
            Some(2) => return false,
            _ => {}
        }
        state.insert(n, 1);
        let found = adj.get(&n).into_iter().flatten().any(|&m| visit(m, adj, state));
        state.insert(n, 2);
        found
    }
    let mut state = HashMap::new();
    adj.keys().any(|&n| visit(n, &adj, &mut state))
}

/// `Ok(())` when the committed projection of the run is conflict
/// serializable.
pub fn check_micro(seed: u64) -> Result<(), String> {
    let w = micro_workload(seed);
    let r = run_micro(&w)?;
    let g = SerializationGraph::build(&r.events).map_err(|e| e.to_string())?;
    match g.find_cycle() {
        None => Ok(()),
        Some(c) => Err(format!("workload {seed}: cycle {c:?}")),
    }
}

// ---------------------------------------------------------------------------
// reconciliation

/// Every distinct order of `n` transactions doing two steps each (read, then
/// commit), as the sequence of transaction indexes.
pub fn two_step_interleavings(n: usize) -> Vec<Vec<usize>> {
    fn go(left: &mut [u8], cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.iter().all(|&l| l == 0) {
            out.push(cur.clone());
            return;
        }
        for i in 0..left.len() {
            if left[i] > 0 {
                left[i] -= 1;
                cur.push(i);
                go(left, cur, out);
                cur.pop();
                left[i] += 1;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut vec![2; n], &mut Vec::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaCase {
    pub initial: i64,
    pub constraint: Constraint,
    pub deltas: Vec<i64>,
    /// First occurrence of an index is its read, the second its commit.
    pub order: Vec<usize>,
}

/// Replays the case on a reconciled item and checks it against a sequential
/// model: a commit succeeds iff the latest value plus its delta keeps the
/// constraint, and the final value is the initial plus all committed deltas.
pub fn check_deltas(c: &DeltaCase) -> Result<(), String> {
    let store = Store::new();
    let x = item("r");
    store
        .create_item(x.clone(), c.initial, CcClass::R, Some(c.constraint))
        .map_err(|e| e.to_string())?;
    let rig = Rig::new(store, false);
    let mut txns: Vec<Option<Txn>> = (0..c.deltas.len()).map(|_| None).collect();
    let mut model = c.initial;
    let mut committed_sum = 0i64;
    for (step, &i) in c.order.iter().enumerate() {
        rig.clock.set(step as f64);
        match txns[i].take() {
            None => {
                let mut t = rig.engine.begin(false);
                match rig.engine.read(&mut t, &x).map_err(|e| e.to_string())? {
                    ReadOutcome::Ready { .. } => {}
                    other => return Err(format!("reconciled read returned {other:?}")),
                }
                txns[i] = Some(t);
            }
            Some(mut t) => {
                let d = c.deltas[i];
                let read = t.read_set()[&x].value.as_int().expect("numeric");
                // odd transactions write an absolute value
                let intent = if i % 2 == 0 {
                    WriteIntent::Add(d)
                } else {
                    WriteIntent::Set(Value::Int(read + d))
                };
                let out = rig
                    .engine
                    .submit_and_commit(&mut t, [(x.clone(), intent)])
                    .map_err(|e| e.to_string())?;
                let expect_ok = c.constraint.satisfied(model + d);
                match (out, expect_ok) {
                    (Outcome::Commit, true) => {
                        model += d;
                        committed_sum += d;
                    }
                    (Outcome::Abort(AbortReason::Constraint), false) => {}
                    (o, e) => return Err(format!("{c:?}: txn {i} got {o:?}, model expected commit={e}")),
                }
                let now = rig.engine.store().read_committed(&x).map_err(|e| e.to_string())?.0;
                let now = now.as_int().expect("numeric");
                if !c.constraint.satisfied(now) {
                    return Err(format!("{c:?}: committed state {now} violates the constraint"));
                }
            }
        }
    }
    let last = rig.engine.store().read_committed(&x).map_err(|e| e.to_string())?.0;
    if last != Value::Int(c.initial + committed_sum) {
        return Err(format!("{c:?}: final {last} != {} + {committed_sum}", c.initial));
    }
    Ok(())
}

pub fn random_delta_case(rng: &mut ChaCha8Rng) -> DeltaCase {
    let n = rng.random_range(5..=10);
    let deltas: Vec<i64> = (0..n).map(|_| rng.random_range(-6..=6)).collect();
    let mut order: Vec<usize> = (0..n).flat_map(|i| [i, i]).collect();
    order.shuffle(rng);
    DeltaCase {
        initial: rng.random_range(0..=10),
        constraint: Constraint::at_least(0),
        deltas,
        order,
    }
}

// ---------------------------------------------------------------------------
// escrow

/// A reservation may be granted iff every subset of the outstanding grants
/// together with it, applied to the committed value, stays admissible.
pub fn brute_force_grant(committed: i64, c: &Constraint, outstanding: &[i64], delta: i64) -> bool {
    let mut all = outstanding.to_vec();
    all.push(delta);
    (0u32..1 << all.len()).all(|mask| {
        let sum: i64 = (0..all.len()).filter(|b| mask & (1 << b) != 0).map(|b| all[b]).sum();
        c.satisfied(committed + sum)
    })
}

/// Requests every delta of `seq` on a fresh escrow item, compares each
/// decision with the brute-force oracle, then commits or aborts the granted
/// transactions (`commit_mask` picks) and checks every installed value.
pub fn check_escrow(initial: i64, c: Constraint, seq: &[i64], commit_mask: u32) -> Result<(), String> {
    let store = Store::new();
    let x = item("e");
    store
        .create_item(x.clone(), initial, CcClass::E, Some(c))
        .map_err(|e| e.to_string())?;
    let rig = Rig::new(store, false);
    let mut granted: Vec<(Txn, i64)> = Vec::new();
    for (k, &d) in seq.iter().enumerate() {
        rig.clock.set(k as f64);
        let outstanding: Vec<i64> = granted.iter().map(|(_, d)| *d).collect();
        let expect = brute_force_grant(initial, &c, &outstanding, d);
        let mut t = rig.engine.begin(false);
        let got = match rig.engine.read_escrow(&mut t, &x, d).map_err(|e| e.to_string())? {
            ReadOutcome::Ready { .. } => true,
            ReadOutcome::Aborted(AbortReason::Constraint) => false,
            other => return Err(format!("escrow read returned {other:?}")),
        };
        if got != expect {
            return Err(format!(
                "{seq:?} from {initial}: request {k} ({d}) engine={got} oracle={expect}"
            ));
        }
        if got {
            granted.push((t, d));
        }
    }
    let mut value = initial;
    for (k, (mut t, d)) in granted.into_iter().enumerate() {
        if commit_mask & (1 << k) != 0 {
            let out = rig
                .engine
                .submit_and_commit(&mut t, [(x.clone(), WriteIntent::Add(d))])
                .map_err(|e| e.to_string())?;
            if out != Outcome::Commit {
                return Err(format!("{seq:?}: granted reservation {d} ended with {out:?}"));
            }
            value += d;
        } else {
            rig.engine.abort(&mut t, AbortReason::Validation);
        }
        let now = rig.engine.store().read_committed(&x).map_err(|e| e.to_string())?.0;
        if now != Value::Int(value) || !c.satisfied(value) {
            return Err(format!("{seq:?}: committed {now}, expected {value} within {c}"));
        }
    }
    Ok(())
}

/// All sequences of length 1..=`max_len` over `domain`.
pub fn sequences(domain: &[i64], max_len: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let mut layer: Vec<Vec<i64>> = vec![Vec::new()];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|p| {
                domain.iter().map(move |&d| {
                    let mut q = p.clone();
                    q.push(d);
                    q
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub fn distinct<T: std::hash::Hash + Eq + Clone>(v: &[T]) -> usize {
    v.iter().cloned().collect::<HashSet<_>>().len()
}
