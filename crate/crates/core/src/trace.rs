//! Schedule events and their line format `time_ms,txn_id,op,item,detail`.
//!
//! Detail conventions:
//!
//! * `r`, `w`: `{class}:{version}` (version read / version installed)
//! * `l`: `P`
//! * `c`: `arrival=..;end=..;service=..`
//! * `a`: `{reason};arrival=..;end=..;service=..`
//!
//! Times inside the detail are exact (shortest round-trip decimal), the
//! leading `time_ms` column is truncated to whole milliseconds.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::types::{AbortReason, CcClass, ItemId, Millis, Outcome, TxnId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Read,
    Lock,
    Write,
    Commit,
    Abort,
}

impl Op {
    pub fn as_char(self) -> char {
        match self {
            Op::Read => 'r',
            Op::Lock => 'l',
            Op::Write => 'w',
            Op::Commit => 'c',
            Op::Abort => 'a',
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl FromStr for Op {
    type Err = TraceError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "r" => Ok(Op::Read),
            "l" => Ok(Op::Lock),
            "w" => Ok(Op::Write),
            "c" => Ok(Op::Commit),
            "a" => Ok(Op::Abort),
            other => Err(TraceError::Parse(format!("unknown op {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEvent {
    pub time: Millis,
    pub txn: TxnId,
    pub op: Op,
    pub item: Option<ItemId>,
    pub detail: String,
}

impl ScheduleEvent {
    pub fn access(time: Millis, txn: TxnId, op: Op, item: ItemId, class: CcClass, version: u64) -> Self {
        Self {
            time,
            txn,
            op,
            item: Some(item),
            detail: format!("{class}:{version}"),
        }
    }

    pub fn lock(time: Millis, txn: TxnId, item: ItemId) -> Self {
        Self {
            time,
            txn,
            op: Op::Lock,
            item: Some(item),
            detail: "P".into(),
        }
    }

    pub fn termination(t: &Termination) -> Self {
        let times = format!(
            "arrival={};end={};service={}",
            t.arrival, t.time, t.service_time
        );
        let (op, detail) = match t.outcome {
            Outcome::Commit => (Op::Commit, times),
            Outcome::Abort(r) => (Op::Abort, format!("{r};{times}")),
        };
        Self {
            time: t.time,
            txn: t.txn,
            op,
            item: None,
            detail,
        }
    }

    /// `(class, version)` from an `r`/`w` detail, when present.
    pub fn class_version(&self) -> (Option<CcClass>, Option<u64>) {
        let mut parts = self.detail.splitn(2, ':');
        let class = parts.next().and_then(|c| c.parse().ok());
        let version = parts.next().and_then(|v| v.parse().ok());
        (class, version)
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.time.floor() as i64,
            self.txn,
            self.op,
            self.item.as_ref().map(ItemId::as_str).unwrap_or(""),
            self.detail
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, TraceError> {
        let mut f = line.splitn(5, ',');
        let mut next = |name: &str| {
            f.next()
                .map(str::trim)
                .ok_or_else(|| TraceError::Parse(format!("missing {name} in {line:?}")))
        };
        let time: f64 = next("time")?
            .parse()
            .map_err(|_| TraceError::Parse(format!("bad time in {line:?}")))?;
        let txn: TxnId = next("txn")?
            .parse()
            .map_err(|_| TraceError::Parse(format!("bad txn id in {line:?}")))?;
        let op: Op = next("op")?.parse()?;
        let item = match next("item")? {
            "" => None,
            s => Some(ItemId::new(s).map_err(|e| TraceError::Parse(e.to_string()))?),
        };
        let detail = f.next().unwrap_or("").trim().to_string();
        Ok(Self {
            time,
            txn,
            op,
            item,
            detail,
        })
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace parse: {0}")]
    Parse(String),
    #[error("trace io: {0}")]
    Io(#[from] std::io::Error),
}

/// Summary of one finished transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Termination {
    pub txn: TxnId,
    pub arrival: Millis,
    pub time: Millis,
    pub outcome: Outcome,
    /// Response time minus lock waits and disconnect time.
    pub service_time: Millis,
    pub read_only: bool,
    pub items: Vec<(ItemId, CcClass)>,
}

impl Termination {
    pub fn response_time(&self) -> Millis {
        self.time - self.arrival
    }

    /// Recovers a termination from a `c`/`a` event. Item list and read-only
    /// flag are not part of the line format.
    pub fn from_event(e: &ScheduleEvent) -> Result<Option<Self>, TraceError> {
        let outcome_reason = match e.op {
            Op::Commit => None,
            Op::Abort => Some(()),
            _ => return Ok(None),
        };
        let bad = || TraceError::Parse(format!("bad termination detail {:?}", e.detail));
        let mut parts = e.detail.split(';');
        let outcome = match outcome_reason {
            None => Outcome::Commit,
            Some(()) => Outcome::Abort(
                parts
                    .next()
                    .and_then(|r| r.parse::<AbortReason>().ok())
                    .ok_or_else(bad)?,
            ),
        };
        let (mut arrival, mut end, mut service) = (None, None, None);
        for kv in parts {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let v: f64 = v.parse().map_err(|_| bad())?;
            match k {
                "arrival" => arrival = Some(v),
                "end" => end = Some(v),
                "service" => service = Some(v),
                _ => return Err(bad()),
            }
        }
        Ok(Some(Self {
            txn: e.txn,
            arrival: arrival.ok_or_else(bad)?,
            time: end.ok_or_else(bad)?,
            outcome,
            service_time: service.ok_or_else(bad)?,
            read_only: false,
            items: Vec::new(),
        }))
    }
}

pub const TRACE_HEADER: &str = "time_ms,txn_id,op,item,detail";

pub fn write_trace<W: Write>(events: &[ScheduleEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRACE_HEADER}")?;
    for e in events {
        writeln!(w, "{}", e.to_line())?;
    }
    w.flush()
}

/// Reads a trace; the header line and blank lines are skipped.
pub fn read_trace<R: BufRead>(r: R) -> Result<Vec<ScheduleEvent>, TraceError> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with("time_ms") || line.starts_with('#') {
            continue;
        }
        out.push(ScheduleEvent::parse_line(line)?);
    }
    Ok(out)
}

pub fn terminations(events: &[ScheduleEvent]) -> Result<Vec<Termination>, TraceError> {
    let mut out = Vec::new();
    for e in events {
        if let Some(t) = Termination::from_event(e)? {
            out.push(t);
        }
    }
    Ok(out)
}
