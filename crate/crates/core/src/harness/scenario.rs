//! Scripted scenarios on a virtual clock.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{sample, HarnessError, Inbox, Report};
use crate::adapt::{AdaptMode, AdaptationConfig, Switch};
use crate::clock::VirtualClock;
use crate::engine::{Engine, EngineConfig, ReadOutcome};
use crate::metrics::Collector;
use crate::store::{Constraint, Store};
use crate::txn::{Phase, Txn, WriteIntent};
use crate::types::{item, CcClass, ItemId, Millis, Outcome};

#[derive(Debug, Clone)]
enum Action {
    /// Begin transaction `n` (1-based script number) and read an item.
    BeginRead(usize, &'static str),
    /// Read an escrow item reserving a delta.
    Escrow(usize, &'static str, i64),
    /// Submit the write set and commit.
    Write(usize, &'static str, i64),
    Tick,
}

/// Result of the three-window switching scenario.
#[derive(Debug, Clone)]
pub struct SwitchScenario {
    /// (committed, terminated minus reclassification aborts) per window.
    pub windows: Vec<(u64, u64)>,
    /// Commit rate after each window closed.
    pub cr: Vec<f64>,
    pub switches: Vec<Switch>,
    /// Outcome per script number.
    pub outcomes: BTreeMap<usize, Outcome>,
    /// Script numbers in the order they terminated.
    pub termination_order: Vec<usize>,
    pub report: Report,
}

/// Two items: `x` (optimistic, adaptable) and `y` (escrow, value 1, must
/// stay positive). Ten transactions read `x`; the first commits an update
/// and seven of the others collide with it, so the first window ends with
/// cr = 1/8 and `x` becomes pessimistic. In the second window transaction 10
/// fails because its optimistic read is stale after the switch, transaction 9
/// is refused an escrow reservation on `y`, and three lockers commit in
/// turn: cr = 3/4. Two more commits in the third window (cr = 2/2) switch
/// `x` back.
pub fn switching_scenario() -> Result<SwitchScenario, HarnessError> {
    use Action::*;
    let mut script: Vec<(Millis, Action)> = Vec::new();
    for n in 1..=10 {
        script.push((n as f64, BeginRead(n, "x")));
    }
    script.push((20.0, Write(1, "x", 1)));
    for n in 2..=8 {
        script.push((19.0 + n as f64, Write(n, "x", 1)));
    }
    script.push((100.0, Tick));
    script.push((110.0, Write(10, "x", 1)));
    script.push((115.0, Escrow(9, "y", -5)));
    script.push((130.0, BeginRead(11, "x")));
    script.push((132.0, BeginRead(12, "x")));
    script.push((134.0, BeginRead(13, "x")));
    script.push((140.0, Write(11, "x", 1)));
    script.push((150.0, Write(12, "x", 1)));
    script.push((160.0, Write(13, "x", 1)));
    script.push((200.0, Tick));
    script.push((210.0, BeginRead(14, "x")));
    script.push((220.0, Write(14, "x", 1)));
    script.push((230.0, BeginRead(15, "x")));
    script.push((240.0, Write(15, "x", 1)));
    script.push((300.0, Tick));

    let store = Arc::new(Store::new());
    store.create_item(item("x"), 0, CcClass::O, None)?;
    store.create_item(item("y"), 1, CcClass::E, Some(Constraint::greater_than(0)))?;
    let clock = Arc::new(VirtualClock::new());
    let cfg = AdaptationConfig {
        gamma: 0.8,
        delta: 0.1,
        beta: None,
        tw_ms: 100.0,
        mode: AdaptMode::TimeWindow,
        ..AdaptationConfig::default()
    };
    let engine = Engine::new(
        store,
        clock.clone(),
        EngineConfig {
            adaptation: Some(cfg),
            snapshot_reads: false,
        },
    )?;
    let collector = Collector::new();
    let inbox = Arc::new(Inbox::default());
    engine.add_observer(collector.clone());
    engine.add_observer(inbox.clone());
    let x = item("x");

    let mut txns: BTreeMap<usize, Txn> = BTreeMap::new();
    let mut waiting: BTreeMap<usize, ItemId> = BTreeMap::new();
    let mut windows = Vec::new();
    let mut cr = Vec::new();
    let mut outcomes = BTreeMap::new();
    let mut order = Vec::new();
    let mut samples = Vec::new();
    let mut settle = |n: usize, t: &Txn| {
        let o = match (t.abort_reason(), t.phase()) {
            (Some(r), _) => Outcome::Abort(r),
            (None, Phase::Committed) => Outcome::Commit,
            _ => return,
        };
        if outcomes.insert(n, o).is_none() {
            order.push(n);
        }
    };

    for (at, action) in script {
        clock.set(at);
        match action {
            BeginRead(n, k) => {
                let mut t = engine.begin(false);
                if engine.read(&mut t, &item(k))? == ReadOutcome::Waiting {
                    waiting.insert(n, item(k));
                }
                txns.insert(n, t);
            }
            Escrow(n, k, d) => {
                let t = txns.get_mut(&n).expect("script begins first");
                engine.read_escrow(t, &item(k), d)?;
                settle(n, t);
            }
            Write(n, k, d) => {
                let t = txns.get_mut(&n).expect("script begins first");
                engine.submit_and_commit(t, [(item(k), WriteIntent::Add(d))])?;
                settle(n, t);
            }
            Tick => {
                let v = engine.adapter().and_then(|a| a.view(&x)).expect("x is adaptable");
                windows.push((v.window.committed, v.window.terminated - v.window.reclass_aborts));
                engine.tick();
                let v = engine.adapter().and_then(|a| a.view(&x)).expect("x is adaptable");
                cr.push(v.cr);
                samples.extend(sample(&engine, &x));
            }
        }
        // granted lockers repeat their read at once
        for (id, _) in inbox.take_wakes() {
            let n = txns.iter().find(|(_, t)| t.id() == id).map(|(n, _)| *n);
            if let Some(n) = n {
                if let Some(k) = waiting.remove(&n) {
                    let t = txns.get_mut(&n).expect("known");
                    if engine.read(t, &k)? == ReadOutcome::Waiting {
                        waiting.insert(n, k);
                    }
                }
            }
        }
        inbox.take_switches();
    }
    let drained = collector.drain();
    Ok(SwitchScenario {
        windows,
        cr,
        switches: drained.switches.clone(),
        outcomes,
        termination_order: order,
        report: Report::assemble(drained, samples, 100.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapt::Rule;
    use crate::types::AbortReason;

    #[test]
    fn switching_scenario_replays() {
        let s = switching_scenario().unwrap();
        assert_eq!(s.windows, vec![(1, 8), (3, 4), (2, 2)]);
        assert_eq!(s.cr, vec![0.125, 0.75, 1.0]);
        let moves: Vec<_> = s.switches.iter().map(|w| (w.time, w.from, w.to, w.rule)).collect();
        assert_eq!(
            moves,
            vec![
                (100.0, CcClass::O, CcClass::P, Rule::LowCommitRate),
                (300.0, CcClass::P, CcClass::O, Rule::HighCommitRate),
            ]
        );
        assert_eq!(s.outcomes[&10], Outcome::Abort(AbortReason::Reclassification));
        assert_eq!(s.outcomes[&9], Outcome::Abort(AbortReason::Constraint));
        let pos = |n| s.termination_order.iter().position(|&m| m == n).unwrap();
        assert!(pos(10) < pos(9));
        assert_eq!(s.outcomes.len(), 15);
    }
}
