//! Multiversion serialization graph over committed transactions.
//!
//! Only items traced as class `O` or `P` contribute edges; reconciled and
//! escrowed items commute by construction. For each item the committed
//! versions form a chain, and
//!
//! * the writer of version `v` precedes the writer of `v + 1` (ww),
//! * the writer of `v` precedes every reader of `v` (wr),
//! * every reader of `v` precedes the writer of `v + 1` (rw).
//!
//! Events without a version are numbered in trace order: a read sees the
//! newest version committed before it, a transaction's writes get their
//! versions when its commit event appears.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::trace::{Op, ScheduleEvent};
use crate::types::{CcClass, ItemId, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Conflict {
    WriteWrite,
    WriteRead,
    ReadWrite,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub from: TxnId,
    pub to: TxnId,
    pub item: ItemId,
    pub kind: Conflict,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SerializationGraph {
    pub nodes: BTreeSet<TxnId>,
    pub edges: BTreeSet<Edge>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SgError {
    #[error("transaction {0} never terminated")]
    Unterminated(TxnId),
    #[error("transaction {0} terminated twice")]
    DoubleTermination(TxnId),
    #[error("event without item: {0}")]
    MissingItem(String),
}

#[derive(Default)]
struct TxnLog {
    reads: Vec<(ItemId, Option<CcClass>, Option<u64>)>,
    writes: Vec<(ItemId, Option<CcClass>, Option<u64>)>,
    committed: Option<bool>,
}

impl SerializationGraph {
    pub fn build(events: &[ScheduleEvent]) -> Result<Self, SgError> {
        let mut logs: BTreeMap<TxnId, TxnLog> = BTreeMap::new();
        let mut latest: HashMap<ItemId, u64> = HashMap::new();
        let mut class_of: HashMap<ItemId, CcClass> = HashMap::new();

        for e in events {
            let log = logs.entry(e.txn).or_default();
            let item = || {
                e.item
                    .clone()
                    .ok_or_else(|| SgError::MissingItem(e.to_line()))
            };
            match e.op {
                Op::Read => {
                    let id = item()?;
                    let (class, version) = e.class_version();
                    let version = version.or_else(|| Some(*latest.get(&id).unwrap_or(&1)));
                    note_class(&mut class_of, &id, class);
                    log.reads.push((id, class, version));
                }
                Op::Write => {
                    let id = item()?;
                    let (class, version) = e.class_version();
                    note_class(&mut class_of, &id, class);
                    if let Some(v) = version {
                        let cur = latest.entry(id.clone()).or_insert(1);
                        *cur = (*cur).max(v);
                    }
                    log.writes.push((id, class, version));
                }
                Op::Lock => {}
                Op::Commit | Op::Abort => {
                    if log.committed.is_some() {
                        return Err(SgError::DoubleTermination(e.txn));
                    }
                    let ok = e.op == Op::Commit;
                    log.committed = Some(ok);
                    if ok {
                        for (id, _, v) in log.writes.iter_mut() {
                            if v.is_none() {
                                let cur = latest.entry(id.clone()).or_insert(1);
                                *cur += 1;
                                *v = Some(*cur);
                            }
                        }
                    }
                }
            }
        }

        let mut g = SerializationGraph::default();
        // item -> version -> writer / readers
        let mut writer: HashMap<(ItemId, u64), TxnId> = HashMap::new();
        let mut readers: HashMap<(ItemId, u64), Vec<TxnId>> = HashMap::new();
        for (&t, log) in &logs {
            match log.committed {
                None => return Err(SgError::Unterminated(t)),
                Some(false) => continue,
                Some(true) => {}
            }
            g.nodes.insert(t);
            for (id, class, v) in &log.writes {
                if tracked(&class_of, id, *class) {
                    writer.insert((id.clone(), v.expect("numbered at commit")), t);
                }
            }
            for (id, class, v) in &log.reads {
                if tracked(&class_of, id, *class) {
                    readers
                        .entry((id.clone(), v.expect("numbered at read")))
                        .or_default()
                        .push(t);
                }
            }
        }
        let mut add = |from: TxnId, to: TxnId, item: &ItemId, kind| {
            if from != to {
                g.edges.insert(Edge {
                    from,
                    to,
                    item: item.clone(),
                    kind,
                });
            }
        };
        for ((id, v), &w) in &writer {
            if let Some(&next) = writer.get(&(id.clone(), v + 1)) {
                add(w, next, id, Conflict::WriteWrite);
            }
            for &r in readers.get(&(id.clone(), *v)).into_iter().flatten() {
                add(w, r, id, Conflict::WriteRead);
            }
        }
        for ((id, v), rs) in &readers {
            if let Some(&next) = writer.get(&(id.clone(), v + 1)) {
                for &r in rs {
                    add(r, next, id, Conflict::ReadWrite);
                }
            }
        }
        Ok(g)
    }

    /// Some cycle as a closed node sequence (first = last), if any.
    pub fn find_cycle(&self) -> Option<Vec<TxnId>> {
        let mut adj: BTreeMap<TxnId, BTreeSet<TxnId>> = BTreeMap::new();
        for e in &self.edges {
            adj.entry(e.from).or_default().insert(e.to);
        }
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut mark: HashMap<TxnId, Mark> = self.nodes.iter().map(|&n| (n, Mark::New)).collect();
        let empty = BTreeSet::new();
        for &root in &self.nodes {
            if mark[&root] != Mark::New {
                continue;
            }
            // iterative DFS keeping the open path
            let mut path: Vec<TxnId> = vec![root];
            let mut iters = vec![adj.get(&root).unwrap_or(&empty).iter()];
            mark.insert(root, Mark::Open);
            while let Some(it) = iters.last_mut() {
                match it.next() {
                    Some(&n) => match mark.get(&n).copied().unwrap_or(Mark::Done) {
                        Mark::Open => {
                            let start = path.iter().position(|&p| p == n).expect("open node on path");
                            let mut cycle = path[start..].to_vec();
                            cycle.push(n);
                            return Some(cycle);
                        }
                        Mark::New => {
                            mark.insert(n, Mark::Open);
                            path.push(n);
                            iters.push(adj.get(&n).unwrap_or(&empty).iter());
                        }
                        Mark::Done => {}
                    },
                    None => {
                        let done = path.pop().expect("path tracks iterators");
                        mark.insert(done, Mark::Done);
                        iters.pop();
                    }
                }
            }
        }
        None
    }

    pub fn is_acyclic(&self) -> bool {
        self.find_cycle().is_none()
    }
}

fn note_class(map: &mut HashMap<ItemId, CcClass>, id: &ItemId, class: Option<CcClass>) {
    if let Some(c) = class {
        map.entry(id.clone()).or_insert(c);
    }
}

fn tracked(class_of: &HashMap<ItemId, CcClass>, id: &ItemId, class: Option<CcClass>) -> bool {
    class
        .or_else(|| class_of.get(id).copied())
        .unwrap_or(CcClass::O)
        .is_conflict_tracked()
}
