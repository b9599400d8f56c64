//! Wall-clock executor. Transactions run as callback chains on the engine's
//! asynchronous lanes; a timer thread releases arrivals, read pacing and
//! disconnect periods, and a ticker closes time windows.

use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, RecvTimeoutError, Sender};
use parking_lot::Mutex;

use super::config::RunConfig;
use super::template::Intent;
use super::{new_engine, observed_item, sample, HarnessError, Job, Report};
use crate::clock::SystemClock;
use crate::engine::{EngineError, ReadOutcome};
use crate::lanes::{LaneConfig, Lanes};
use crate::metrics::{ClassSample, Collector};
use crate::txn::Txn;
use crate::types::{AbortReason, ItemId};

type Task = Box<dyn FnOnce() + Send>;

struct Entry {
    at: Instant,
    seq: u64,
    task: Task,
}

impl PartialEq for Entry {
    fn eq(&self, o: &Self) -> bool {
        (self.at, self.seq) == (o.at, o.seq)
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Entry {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        (self.at, self.seq).cmp(&(o.at, o.seq))
    }
}

enum TimerMsg {
    At(Instant, Task),
    Stop,
}

/// Runs tasks at their due instants on one thread.
pub struct Timer {
    tx: Sender<TimerMsg>,
    handle: Option<JoinHandle<()>>,
}

impl Timer {
    pub fn start() -> Self {
        let (tx, rx) = unbounded::<TimerMsg>();
        let handle = std::thread::spawn(move || {
            let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::new();
            let mut seq = 0u64;
            loop {
                let now = Instant::now();
                while heap.peek().is_some_and(|Reverse(e)| e.at <= now) {
                    let Reverse(e) = heap.pop().expect("peeked");
                    (e.task)();
                }
                let msg = match heap.peek() {
                    Some(Reverse(e)) => match rx.recv_timeout(e.at.saturating_duration_since(Instant::now())) {
                        Ok(m) => m,
                        Err(RecvTimeoutError::Timeout) => continue,
                        Err(RecvTimeoutError::Disconnected) => return,
                    },
                    None => match rx.recv() {
                        Ok(m) => m,
                        Err(_) => return,
                    },
                };
                match msg {
                    TimerMsg::At(at, task) => {
                        seq += 1;
                        heap.push(Reverse(Entry { at, seq, task }));
                    }
                    TimerMsg::Stop => return,
                }
            }
        });
        Self {
            tx,
            handle: Some(handle),
        }
    }

    pub fn at(&self, at: Instant, task: impl FnOnce() + Send + 'static) {
        let _ = self.tx.send(TimerMsg::At(at, Box::new(task)));
    }

    pub fn after(&self, d: Duration, task: impl FnOnce() + Send + 'static) {
        self.at(Instant::now() + d, task);
    }
}

impl Drop for Timer {
    fn drop(&mut self) {
        let _ = self.tx.send(TimerMsg::Stop);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn millis(ms: f64) -> Duration {
    Duration::from_secs_f64(ms.max(0.0) / 1000.0)
}

struct Ctx {
    lanes: Lanes,
    timer: Timer,
    jobs: Vec<Job>,
    read_ms: f64,
    remaining: AtomicUsize,
    done: Sender<()>,
    error: Mutex<Option<EngineError>>,
}

impl Ctx {
    fn finish(&self) {
        if self.remaining.fetch_sub(1, Ordering::SeqCst) == 1 {
            let _ = self.done.send(());
        }
    }

    fn fail(self: &Arc<Self>, txn: Txn, e: EngineError) {
        self.error.lock().get_or_insert(e);
        let ctx = self.clone();
        // free whatever the transaction holds so the others can finish
        self.lanes.abort(txn, AbortReason::Validation, move |_, _| ctx.finish());
    }
}

fn step(ctx: Arc<Ctx>, s: usize, mut txn: Txn, next: usize) {
    let job = &ctx.jobs[s];
    if next < job.template.accesses.len() {
        let a = &job.template.accesses[next];
        let c = ctx.clone();
        let cb = move |txn: Txn, out: Result<ReadOutcome, EngineError>| match out {
            Ok(ReadOutcome::Ready { .. }) => {
                let c2 = c.clone();
                c.timer.after(millis(c.read_ms), move || step(c2, s, txn, next + 1));
            }
            Ok(ReadOutcome::Aborted(_)) => c.finish(),
            Ok(ReadOutcome::Waiting) => unreachable!("lanes park waiting reads"),
            Err(e) => c.fail(txn, e),
        };
        match a.intent {
            Intent::Escrow(d) => ctx.lanes.read_escrow(txn, a.item.clone(), d, cb),
            _ => ctx.lanes.read(txn, a.item.clone(), cb),
        }
        return;
    }
    if let Err(e) = ctx.lanes.engine().disconnect(&mut txn) {
        ctx.fail(txn, e);
        return;
    }
    let c = ctx.clone();
    ctx.timer.after(millis(job.dt), move || {
        let writes = c.jobs[s].template.writes();
        let c2 = c.clone();
        c.lanes.write(txn, writes, move |txn, out| match out {
            Ok(_) => c2.finish(),
            Err(e) => c2.fail(txn, e),
        });
    });
}

pub fn run(cfg: &RunConfig) -> Result<Report, HarnessError> {
    let clock = Arc::new(SystemClock::new());
    let origin = clock.start();
    let (engine, jobs) = new_engine(cfg, clock.clone())?;
    let collector = Collector::new();
    engine.add_observer(collector.clone());
    let observe: ItemId = observed_item(cfg);

    let (done_tx, done_rx) = bounded(1);
    let n = jobs.len();
    let ctx = Arc::new(Ctx {
        lanes: Lanes::start(engine.clone(), LaneConfig::default()),
        timer: Timer::start(),
        jobs,
        read_ms: cfg.read_ms,
        remaining: AtomicUsize::new(n),
        done: done_tx,
        error: Mutex::new(None),
    });

    let stop = Arc::new(AtomicBool::new(false));
    let samples = Arc::new(Mutex::new(Vec::<ClassSample>::new()));
    let ticker = {
        let (engine, stop, samples, observe) = (engine.clone(), stop.clone(), samples.clone(), observe.clone());
        let tw = cfg.tw_ms;
        std::thread::spawn(move || {
            let mut k = 1u32;
            loop {
                let due = origin + millis(tw * k as f64);
                if let Some(d) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(d);
                }
                let last = stop.load(Ordering::SeqCst);
                engine.tick();
                if let Some(x) = sample(&engine, &observe) {
                    samples.lock().push(x);
                }
                if last {
                    return;
                }
                k += 1;
            }
        })
    };

    for s in 0..n {
        let c = ctx.clone();
        let at = origin + millis(ctx.jobs[s].arrival);
        let read_only = ctx.jobs[s].template.read_only;
        ctx.timer.at(at, move || {
            let txn = c.lanes.engine().begin(read_only);
            step(c.clone(), s, txn, 0);
        });
    }
    let _ = done_rx.recv();
    stop.store(true, Ordering::SeqCst);
    let _ = ticker.join();

    let error = ctx.error.lock().take();
    // callbacks still on their way out hold clones; the lanes and the timer
    // must be shut down from here, not from one of their own threads
    while Arc::strong_count(&ctx) > 1 {
        std::thread::sleep(Duration::from_millis(1));
    }
    drop(ctx);
    if let Some(e) = error {
        return Err(e.into());
    }
    let samples = std::mem::take(&mut *samples.lock());
    Ok(Report::assemble(collector.drain(), samples, cfg.tw_ms)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timer_runs_tasks_in_due_order() {
        let t = Timer::start();
        let (tx, rx) = unbounded();
        let now = Instant::now();
        for (i, ms) in [30u64, 10, 20].into_iter().enumerate() {
            let tx = tx.clone();
            t.at(now + Duration::from_millis(ms), move || tx.send(i).unwrap());
        }
        let got: Vec<usize> = (0..3).map(|_| rx.recv().unwrap()).collect();
        assert_eq!(got, vec![1, 2, 0]);
    }

    #[test]
    fn short_realtime_run_terminates_everything() {
        let c = RunConfig::parse("clock = realtime\nlambda = 200\nepoch_ms = 200\ndt_max = 5\ntemplate = tpcc\n").unwrap();
        let r = run(&c).unwrap();
        assert_eq!(r.summary.tas as usize, crate::harness::plan(&c).len());
        assert_eq!(r.summary.tas, r.summary.commits + r.summary.aborts);
    }
}
