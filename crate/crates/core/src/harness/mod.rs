//! Experiment driver: arrival generation, transaction templates and the
//! virtual-time and real-time executors.

pub mod arrivals;
pub mod config;
pub mod realtime;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod template;

use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::adapt::Switch;
use crate::engine::{Engine, EngineConfig, EngineError, Observer};
use crate::metrics::{ClassSample, MetricsError};
use crate::store::{ItemSpec, Store, StoreError};
use crate::types::{item, CcClass, ItemId, Millis, TxnId};

use config::{ClockMode, EngineMode, RunConfig, TemplateKind};
pub use report::Report;
use template::{TemplateError, TemplateSource, TxnTemplate};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("writing report: {0}")]
    Io(#[from] std::io::Error),
    #[error("no work left at {time} ms but {live} transactions are still live")]
    Stalled { time: Millis, live: usize },
    #[error("profile spawns no transactions")]
    NoArrivals,
}

/// One spawned transaction: when it arrives, what it does, how long it
/// stays disconnected.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub arrival: Millis,
    pub template: TxnTemplate,
    pub dt: Millis,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Arrivals, templates and disconnect times each come from their own random
/// stream, so the n-th transaction gets the same template and `dt` whatever
/// the arrival rates are.
pub fn plan(cfg: &RunConfig) -> Vec<Job> {
    let profile = cfg.profile();
    let mut arrivals = arrivals::profile_arrivals(&profile.epochs, &mut stream(cfg.seed, 1));
    if let Some(n) = cfg.max_tas {
        arrivals.truncate(n);
    }
    let mut trng = stream(cfg.seed, 2);
    let mut drng = stream(cfg.seed, 3);
    let mut source = TemplateSource::new(cfg.template);
    arrivals
        .into_iter()
        .map(|arrival| {
            let mut template = source.next(&mut trng);
            if cfg.engine_mode == EngineMode::SiOnly {
                template = template.without_escrow();
            }
            let dt = if cfg.dt_max > cfg.dt_min {
                drng.random_range(cfg.dt_min..=cfg.dt_max)
            } else {
                cfg.dt_min
            };
            Job { arrival, template, dt }
        })
        .collect()
}

pub fn item_specs(cfg: &RunConfig) -> Vec<ItemSpec> {
    let mut specs = match cfg.template {
        TemplateKind::SingleItem => template::single_item_specs(cfg.initial_class),
        TemplateKind::TpccDeck => template::tpcc_specs(),
    };
    if cfg.engine_mode == EngineMode::SiOnly {
        for s in &mut specs {
            s.class = CcClass::O;
        }
    }
    specs
}

/// Item sampled into the time series.
pub fn observed_item(cfg: &RunConfig) -> ItemId {
    match (&cfg.observe, cfg.template) {
        (Some(k), _) => item(k),
        (None, TemplateKind::SingleItem) => item(template::HOT_ITEM),
        (None, TemplateKind::TpccDeck) => item(template::CUSTOMER),
    }
}

pub fn build_store(cfg: &RunConfig) -> Result<Store, HarnessError> {
    let store = Store::new();
    store.load(&item_specs(cfg))?;
    Ok(store)
}

pub fn engine_config(cfg: &RunConfig) -> EngineConfig {
    EngineConfig {
        adaptation: cfg.effective_adaptation(),
        snapshot_reads: cfg.snapshot_reads,
    }
}

fn check_jobs(store: &Store, jobs: &[Job]) -> Result<(), HarnessError> {
    for j in jobs {
        j.template.validate()?;
        if let Some(a) = j.template.accesses.iter().find(|a| !store.contains(&a.item)) {
            return Err(TemplateError::MissingItem(j.template.name, a.item.clone()).into());
        }
    }
    Ok(())
}

/// Runs the configured experiment and writes the report files when
/// `out_dir` is set.
pub fn run_experiment(cfg: &RunConfig) -> Result<Report, HarnessError> {
    cfg.validate()?;
    let report = match cfg.clock {
        ClockMode::Virtual => sim::run(cfg)?,
        ClockMode::Realtime => realtime::run(cfg)?,
    };
    if let Some(dir) = &cfg.out_dir {
        report.write_dir(dir)?;
    }
    Ok(report)
}

/// Collects lock wakes and adaptation switches for a driver to act on.
#[derive(Default)]
pub(crate) struct Inbox {
    wakes: Mutex<Vec<(TxnId, ItemId)>>,
    switches: Mutex<Vec<Switch>>,
}

impl Inbox {
    pub(crate) fn take_wakes(&self) -> Vec<(TxnId, ItemId)> {
        std::mem::take(&mut *self.wakes.lock())
    }

    pub(crate) fn take_switches(&self) -> Vec<Switch> {
        std::mem::take(&mut *self.switches.lock())
    }
}

impl Observer for Inbox {
    fn on_wake(&self, txn: TxnId, item: &ItemId) {
        self.wakes.lock().push((txn, item.clone()));
    }
    fn on_adaptation(&self, s: &Switch) {
        self.switches.lock().push(s.clone());
    }
}

/// Class and `rt_est` of `id` as the engine sees them now.
pub(crate) fn sample(engine: &Engine, id: &ItemId) -> Option<ClassSample> {
    let time = engine.now();
    if let Some(v) = engine.adapter().and_then(|a| a.view(id)) {
        return Some(ClassSample {
            time,
            class: v.class,
            rt_est: v.rt_est,
        });
    }
    let class = engine.store().current_class(id).ok()?;
    Some(ClassSample {
        time,
        class,
        rt_est: 0.0,
    })
}

pub(crate) fn new_engine(
    cfg: &RunConfig,
    clock: Arc<dyn crate::clock::Clock>,
) -> Result<(Arc<Engine>, Vec<Job>), HarnessError> {
    let store = Arc::new(build_store(cfg)?);
    let jobs = plan(cfg);
    if jobs.is_empty() {
        return Err(HarnessError::NoArrivals);
    }
    check_jobs(&store, &jobs)?;
    let engine = Engine::new(store, clock, engine_config(cfg))?;
    Ok((Arc::new(engine), jobs))
}
