//! Discrete-event executor on a virtual clock. Every run with the same
//! configuration produces the same event sequence.
//!
//! A transaction issues its reads one after another, `read_ms` apart, then
//! stays disconnected for its `dt`, submits the write set and gets the
//! commit decision `write_ms` later. A read that has to wait is retried at
//! the instant the engine reports the wake. Time-window ticks run after all
//! other events of the same instant.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::sync::Arc;

use super::config::RunConfig;
use super::template::Intent;
use super::{new_engine, observed_item, sample, HarnessError, Inbox, Job, Report};
use crate::clock::VirtualClock;
use crate::engine::{Engine, ReadOutcome};
use crate::metrics::{ClassSample, Collector};
use crate::txn::Txn;
use crate::types::{ItemId, Millis, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Arrive,
    Step,
    Submit,
    Commit,
}

/// Events at the same microsecond run in scheduling order, ticks last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    micros: i64,
    tick: bool,
    seq: u64,
}

struct Session {
    txn: Option<Txn>,
    next: usize,
    done: bool,
}

pub(crate) struct Sim<'a> {
    engine: &'a Engine,
    clock: &'a VirtualClock,
    jobs: &'a [Job],
    read_ms: Millis,
    write_ms: Millis,
    sessions: Vec<Session>,
    by_txn: HashMap<TxnId, usize>,
    queue: BinaryHeap<Reverse<(Key, Option<(Kind, usize)>)>>,
    times: HashMap<u64, Millis>,
    seq: u64,
    live: usize,
    pending: usize,
}

impl<'a> Sim<'a> {
    fn push(&mut self, at: Millis, what: Option<(Kind, usize)>) {
        self.seq += 1;
        let key = Key {
            micros: (at * 1000.0).round() as i64,
            tick: what.is_none(),
            seq: self.seq,
        };
        self.times.insert(self.seq, at);
        if what.is_some() {
            self.pending += 1;
        }
        self.queue.push(Reverse((key, what)));
    }

    fn handle(&mut self, kind: Kind, s: usize) -> Result<(), HarnessError> {
        let now = self.clock_now();
        let job = &self.jobs[s];
        match kind {
            Kind::Arrive => {
                let txn = self.engine.begin(job.template.read_only);
                self.by_txn.insert(txn.id(), s);
                self.sessions[s].txn = Some(txn);
                self.push(now, Some((Kind::Step, s)));
            }
            Kind::Step => {
                let sess = &mut self.sessions[s];
                let txn = sess.txn.as_mut().expect("arrived");
                if sess.next < job.template.accesses.len() {
                    let a = &job.template.accesses[sess.next];
                    let out = match a.intent {
                        Intent::Escrow(d) => self.engine.read_escrow(txn, &a.item, d)?,
                        _ => self.engine.read(txn, &a.item)?,
                    };
                    match out {
                        ReadOutcome::Ready { .. } => {
                            sess.next += 1;
                            self.push(now + self.read_ms, Some((Kind::Step, s)));
                        }
                        ReadOutcome::Waiting => {}
                        ReadOutcome::Aborted(_) => self.close(s),
                    }
                } else {
                    self.engine.disconnect(txn)?;
                    self.push(now + job.dt, Some((Kind::Submit, s)));
                }
            }
            Kind::Submit => {
                let txn = self.sessions[s].txn.as_mut().expect("arrived");
                self.engine.submit(txn, job.template.writes())?;
                self.push(now + self.write_ms, Some((Kind::Commit, s)));
            }
            Kind::Commit => {
                let txn = self.sessions[s].txn.as_mut().expect("arrived");
                self.engine.commit(txn)?;
                self.close(s);
            }
        }
        Ok(())
    }

    fn close(&mut self, s: usize) {
        let sess = &mut self.sessions[s];
        if !sess.done {
            sess.done = true;
            self.live -= 1;
        }
    }

    fn clock_now(&self) -> Millis {
        crate::clock::Clock::now(self.clock)
    }
}

/// Drives `jobs` to completion on `engine`. Returns the class samples of
/// `observe` taken at every window boundary and after every switch of it.
pub(crate) fn drive(
    engine: &Engine,
    clock: &VirtualClock,
    inbox: &Inbox,
    jobs: &[Job],
    cfg: &RunConfig,
    observe: &ItemId,
) -> Result<Vec<ClassSample>, HarnessError> {
    let mut sim = Sim {
        engine,
        clock,
        jobs,
        read_ms: cfg.read_ms,
        write_ms: cfg.write_ms,
        sessions: jobs
            .iter()
            .map(|_| Session {
                txn: None,
                next: 0,
                done: false,
            })
            .collect(),
        by_txn: HashMap::new(),
        queue: BinaryHeap::new(),
        times: HashMap::new(),
        seq: 0,
        live: jobs.len(),
        pending: 0,
    };
    for (i, j) in jobs.iter().enumerate() {
        sim.push(j.arrival, Some((Kind::Arrive, i)));
    }
    let tw = cfg.tw_ms;
    let mut boundary = tw;
    sim.push(boundary, None);

    let mut samples = Vec::new();
    while let Some(Reverse((key, what))) = sim.queue.pop() {
        let at = sim.times.remove(&key.seq).expect("time recorded");
        clock.set(at);
        match what {
            Some((kind, s)) => {
                sim.pending -= 1;
                sim.handle(kind, s)?;
            }
            None => {
                engine.tick();
                if let Some(x) = sample(engine, observe) {
                    samples.push(x);
                }
                if sim.pending > 0 {
                    boundary += tw;
                    sim.push(boundary, None);
                } else if sim.live > 0 {
                    return Err(HarnessError::Stalled { time: at, live: sim.live });
                }
            }
        }
        for (txn, _) in inbox.take_wakes() {
            if let Some(&s) = sim.by_txn.get(&txn) {
                if !sim.sessions[s].done {
                    sim.push(at, Some((Kind::Step, s)));
                }
            }
        }
        if inbox.take_switches().iter().any(|sw| &sw.item == observe) {
            if let Some(x) = sample(engine, observe) {
                samples.push(x);
            }
        }
    }
    Ok(samples)
}

pub fn run(cfg: &RunConfig) -> Result<Report, HarnessError> {
    let clock = Arc::new(VirtualClock::new());
    let (engine, jobs) = new_engine(cfg, clock.clone())?;
    let collector = Collector::new();
    let inbox = Arc::new(Inbox::default());
    engine.add_observer(collector.clone());
    engine.add_observer(inbox.clone());
    let samples = drive(&engine, &clock, &inbox, &jobs, cfg, &observed_item(cfg))?;
    Ok(Report::assemble(collector.drain(), samples, cfg.tw_ms)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{EngineMode, TemplateKind};
    use crate::types::{item, CcClass};

    fn cfg(text: &str) -> RunConfig {
        RunConfig::parse(text).unwrap()
    }

    #[test]
    fn every_spawned_transaction_terminates() {
        let c = cfg("lambda = 40, 80\ndt_min = 0\ndt_max = 30\ntemplate = tpcc\nseed = 3\n");
        let r = run(&c).unwrap();
        assert_eq!(r.summary.tas as usize, plan_len(&c));
        assert_eq!(r.summary.tas, r.summary.commits + r.summary.aborts);
    }

    fn plan_len(c: &RunConfig) -> usize {
        crate::harness::plan(c).len()
    }

    #[test]
    fn identical_runs_give_identical_bytes() {
        let c = cfg("lambda = 30, 60\ndt_min = 5\ndt_max = 50\nseed = 9\n");
        let (a, b) = (run(&c).unwrap(), run(&c).unwrap());
        assert_eq!(a.trace_bytes(), b.trace_bytes());
        assert_eq!(a.summary_bytes(), b.summary_bytes());
    }

    #[test]
    fn contended_optimistic_item_moves_to_locking() {
        let c = cfg("lambda = 60\nepochs = 2\ndt_min = 50\ndt_max = 100\ngamma = 0.8\ndelta = 0.1\nseed = 1\n");
        let r = run(&c).unwrap();
        assert!(r.switches.iter().any(|s| s.item == item("hot") && s.to == CcClass::P));
        assert!(r.summary.aborts > 0);
    }

    #[test]
    fn pessimistic_item_without_adaptation_never_aborts() {
        let c = cfg("lambda = 60\ndt_min = 10\ndt_max = 40\ninitial_class = P\nadaptation = off\n");
        let r = run(&c).unwrap();
        assert_eq!(r.summary.aborts, 0);
        assert!(r.switches.is_empty());
    }

    #[test]
    fn orpe_tpcc_has_no_conflict_aborts() {
        let mut c = RunConfig::default();
        c.template = TemplateKind::TpccDeck;
        c.lambdas = vec![400.0];
        c.read_ms = 1.0;
        c.write_ms = 1.0;
        let r = run(&c).unwrap();
        assert_eq!(r.summary.aborts, 0);
        c.engine_mode = EngineMode::SiOnly;
        let si = run(&c).unwrap();
        assert!(si.summary.aborts > 0);
    }
}
