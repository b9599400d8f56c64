//! Event collection, per-window aggregation and run summaries.

use std::io::Write;
use std::sync::Arc;

use crossbeam_channel::{unbounded, Receiver, Sender};
use thiserror::Error;

use crate::adapt::{compute_cr, Switch, Window};
use crate::engine::Observer;
use crate::trace::{ScheduleEvent, Termination};
use crate::types::{AbortReason, CcClass, ItemId, Millis, TxnId};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no terminated transactions to summarize")]
    Empty,
    #[error("window length must be positive")]
    Window,
    #[error("report io: {0}")]
    Io(#[from] std::io::Error),
}

enum Collected {
    Event(ScheduleEvent),
    Termination(Termination),
    Switch(Switch),
}

/// Observer that funnels engine notifications through one channel.
#[derive(Clone)]
pub struct Collector {
    tx: Sender<Collected>,
    rx: Receiver<Collected>,
}

impl Default for Collector {
    fn default() -> Self {
        let (tx, rx) = unbounded();
        Self { tx, rx }
    }
}

/// Everything a collector received, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct Drained {
    pub events: Vec<ScheduleEvent>,
    pub terminations: Vec<Termination>,
    pub switches: Vec<Switch>,
}

impl Collector {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn drain(&self) -> Drained {
        let mut out = Drained::default();
        for c in self.rx.try_iter() {
            match c {
                Collected::Event(e) => out.events.push(e),
                Collected::Termination(t) => out.terminations.push(t),
                Collected::Switch(s) => out.switches.push(s),
            }
        }
        out
    }
}

impl Observer for Collector {
    fn on_event(&self, e: &ScheduleEvent) {
        let _ = self.tx.send(Collected::Event(e.clone()));
    }
    fn on_termination(&self, t: &Termination) {
        let _ = self.tx.send(Collected::Termination(t.clone()));
    }
    fn on_adaptation(&self, s: &Switch) {
        let _ = self.tx.send(Collected::Switch(s.clone()));
    }
}

/// Class and response-time estimate of the observed item at a point in time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassSample {
    pub time: Millis,
    pub class: CcClass,
    pub rt_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwRow {
    /// End of the window.
    pub time_ms: Millis,
    pub arrivals_cum: u64,
    pub commits_cum: u64,
    pub aborts_cum: u64,
    pub cr: f64,
    pub cr_eff: f64,
    pub rt_est: f64,
    pub current_class: Option<CcClass>,
    /// Whether any transaction terminated in this window.
    pub active: bool,
}

/// Buckets terminations by `floor(time / tw_ms)`. Empty buckets carry the
/// previous rates; class and `rt_est` come from the last sample at or before
/// each window end.
pub fn aggregate(terms: &[Termination], samples: &[ClassSample], tw_ms: f64) -> Result<Vec<TwRow>, MetricsError> {
    if !(tw_ms > 0.0) {
        return Err(MetricsError::Window);
    }
    let mut sorted: Vec<&Termination> = terms.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.txn.cmp(&b.txn)));
    let mut arrivals: Vec<Millis> = terms.iter().map(|t| t.arrival).collect();
    arrivals.sort_by(f64::total_cmp);
    let mut samples: Vec<ClassSample> = samples.to_vec();
    samples.sort_by(|a, b| a.time.total_cmp(&b.time));

    let bucket = |t: Millis| (t / tw_ms).floor().max(0.0) as u64;
    let last = sorted
        .last()
        .map(|t| bucket(t.time))
        .into_iter()
        .chain(arrivals.last().map(|&a| bucket(a)))
        .max();
    let Some(last) = last else {
        return Ok(Vec::new());
    };

    let mut rows = Vec::with_capacity(last as usize + 1);
    let (mut ti, mut ai, mut si) = (0usize, 0usize, 0usize);
    let (mut commits, mut aborts) = (0u64, 0u64);
    let (mut cr, mut cr_eff) = (1.0, 1.0);
    let mut sample: Option<ClassSample> = None;
    for b in 0..=last {
        let mut w = Window::default();
        while ti < sorted.len() && bucket(sorted[ti].time) == b {
            let t = sorted[ti];
            w.record(t.outcome);
            if t.outcome.is_commit() {
                commits += 1;
            } else {
                aborts += 1;
            }
            ti += 1;
        }
        while ai < arrivals.len() && bucket(arrivals[ai]) <= b {
            ai += 1;
        }
        let end = (b + 1) as f64 * tw_ms;
        while si < samples.len() && samples[si].time <= end {
            sample = Some(samples[si]);
            si += 1;
        }
        cr = compute_cr(&w, cr);
        if w.terminated > 0 {
            cr_eff = w.committed as f64 / w.terminated as f64;
        }
        rows.push(TwRow {
            time_ms: end,
            arrivals_cum: ai as u64,
            commits_cum: commits,
            aborts_cum: aborts,
            cr,
            cr_eff,
            rt_est: sample.map_or(0.0, |s| s.rt_est),
            current_class: sample.map(|s| s.class),
            active: w.terminated > 0,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub tas: u64,
    pub commits: u64,
    pub aborts: u64,
    pub aborts_by_reason: [u64; 4],
    pub mean_rt: f64,
    pub mean_cr: f64,
    pub sd_cr: f64,
    pub mean_cr_eff: f64,
    pub commits_per_sec: f64,
    pub deg_conc: f64,
    pub abort_rate: f64,
    pub elapsed_ms: f64,
}

impl Summary {
    pub fn aborts_for(&self, r: AbortReason) -> u64 {
        self.aborts_by_reason[reason_index(r)]
    }

    pub fn abort_rate_for(&self, r: AbortReason) -> f64 {
        self.aborts_for(r) as f64 / self.tas as f64
    }
}

fn reason_index(r: AbortReason) -> usize {
    AbortReason::ALL.iter().position(|x| *x == r).expect("listed")
}

/// Span from the first arrival to the last termination.
pub fn elapsed_of(terms: &[Termination]) -> Millis {
    let start = terms.iter().map(|t| t.arrival).fold(f64::INFINITY, f64::min);
    let end = terms.iter().map(|t| t.time).fold(f64::NEG_INFINITY, f64::max);
    if start.is_finite() && end.is_finite() {
        (end - start).max(0.0)
    } else {
        0.0
    }
}

/// Rates are averaged over every window from time zero to the last one with
/// activity; windows without terminations contribute their carried value.
pub fn summarize(terms: &[Termination], elapsed_ms: Millis, tw_ms: f64) -> Result<Summary, MetricsError> {
    if terms.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut ordered: Vec<&Termination> = terms.iter().collect();
    ordered.sort_by_key(|t| t.txn);
    let tas = ordered.len() as u64;
    let mut by_reason = [0u64; 4];
    let (mut commits, mut rt_sum, mut st_sum) = (0u64, 0.0, 0.0);
    for t in &ordered {
        rt_sum += t.response_time();
        match t.outcome.reason() {
            None => {
                commits += 1;
                st_sum += t.service_time;
            }
            Some(r) => by_reason[reason_index(r)] += 1,
        }
    }
    let aborts = tas - commits;
    let rows = aggregate(terms, &[], tw_ms)?;
    let n = rows.len().max(1) as f64;
    let mean_cr = rows.iter().map(|r| r.cr).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.cr - mean_cr).powi(2)).sum::<f64>() / n;
    let mean_cr_eff = rows.iter().map(|r| r.cr_eff).sum::<f64>() / n;
    let per_ms = |x: f64| if elapsed_ms > 0.0 { x / elapsed_ms } else { 0.0 };
    Ok(Summary {
        tas,
        commits,
        aborts,
        aborts_by_reason: by_reason,
        mean_rt: rt_sum / tas as f64,
        mean_cr,
        sd_cr: var.sqrt(),
        mean_cr_eff,
        commits_per_sec: per_ms(commits as f64) * 1000.0,
        deg_conc: per_ms(st_sum),
        abort_rate: aborts as f64 / tas as f64,
        elapsed_ms,
    })
}

pub fn write_timeseries<W: Write>(rows: &[TwRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "time_ms,arrivals_cum,commits_cum,aborts_cum,cr,cr_eff,rt_est,current_class")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.time_ms,
            r.arrivals_cum,
            r.commits_cum,
            r.aborts_cum,
            r.cr,
            r.cr_eff,
            r.rt_est,
            r.current_class.map(CcClass::as_str).unwrap_or("")
        )?;
    }
    w.flush()
}

pub fn write_summary<W: Write>(s: &Summary, mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "mean_rt_ms,mean_cr,sd_cr,mean_cr_eff,tas,commits,aborts,commits_per_sec,deg_conc,abort_rate,\
         abort_rate_validation,abort_rate_constraint,abort_rate_deadlock,abort_rate_reclassification,elapsed_ms"
    )?;
    let by: Vec<String> = AbortReason::ALL
        .iter()
        .map(|r| s.abort_rate_for(*r).to_string())
        .collect();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        s.mean_rt,
        s.mean_cr,
        s.sd_cr,
        s.mean_cr_eff,
        s.tas,
        s.commits,
        s.aborts,
        s.commits_per_sec,
        s.deg_conc,
        s.abort_rate,
        by.join(","),
        s.elapsed_ms
    )?;
    w.flush()
}

pub const ADAPTATION_HEADER: &str = "time_ms,item,from_class,to_class,cr,rt_est,rule";

pub fn write_adaptations<W: Write>(switches: &[Switch], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{ADAPTATION_HEADER}")?;
    for s in switches {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.time.floor() as i64,
            s.item,
            s.from,
            s.to,
            s.cr,
            s.rt_est,
            s.rule
        )?;
    }
    w.flush()
}

/// Transactions that touched `item`.
pub fn touching<'a>(terms: &'a [Termination], item: &'a ItemId) -> impl Iterator<Item = &'a Termination> + 'a {
    terms.iter().filter(move |t| t.items.iter().any(|(i, _)| i == item))
}

/// Transaction ids in termination order.
pub fn termination_order(terms: &[Termination]) -> Vec<TxnId> {
    terms.iter().map(|t| t.txn).collect()
}
