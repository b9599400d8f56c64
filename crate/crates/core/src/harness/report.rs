use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::adapt::Switch;
use crate::metrics::{self, ClassSample, Drained, MetricsError, Summary, TwRow};
use crate::trace::{self, ScheduleEvent, Termination};
use crate::types::{CcClass, ItemId};

/// Everything one run produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub events: Vec<ScheduleEvent>,
    pub terminations: Vec<Termination>,
    pub switches: Vec<Switch>,
    pub samples: Vec<ClassSample>,
    pub rows: Vec<TwRow>,
    pub summary: Summary,
    pub tw_ms: f64,
}

impl Report {
    pub fn assemble(d: Drained, samples: Vec<ClassSample>, tw_ms: f64) -> Result<Self, MetricsError> {
        let rows = metrics::aggregate(&d.terminations, &samples, tw_ms)?;
        let elapsed = metrics::elapsed_of(&d.terminations);
        let summary = metrics::summarize(&d.terminations, elapsed, tw_ms)?;
        Ok(Self {
            events: d.events,
            terminations: d.terminations,
            switches: d.switches,
            samples,
            rows,
            summary,
            tw_ms,
        })
    }

    pub fn trace_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        trace::write_trace(&self.events, &mut out).expect("writing to memory");
        out
    }

    pub fn summary_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        metrics::write_summary(&self.summary, &mut out).expect("writing to memory");
        out
    }

    /// Writes `trace.csv`, `timeseries.csv`, `summary.csv` and
    /// `adaptations.csv` into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| File::create(dir.join(name)).map(BufWriter::new);
        trace::write_trace(&self.events, open("trace.csv")?)?;
        metrics::write_timeseries(&self.rows, open("timeseries.csv")?)?;
        metrics::write_summary(&self.summary, open("summary.csv")?)?;
        metrics::write_adaptations(&self.switches, open("adaptations.csv")?)?;
        Ok(())
    }

    /// Completed O to P to O round trips of one item.
    pub fn round_trips(&self, item: &ItemId) -> usize {
        let mut trips = 0;
        let mut went_p = false;
        for s in self.switches.iter().filter(|s| &s.item == item) {
            match (s.from, s.to) {
                (CcClass::O, CcClass::P) => went_p = true,
                (CcClass::P, CcClass::O) if went_p => {
                    trips += 1;
                    went_p = false;
                }
                _ => {}
            }
        }
        trips
    }
}
