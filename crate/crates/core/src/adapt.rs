//! Run-time O/P adaptation.
//!
//! Each adaptable item gets a controller that counts the terminations of
//! transactions that touched it and derives a commit rate
//!
//! ```text
//! cr     = committed / (terminated - reclassification aborts)
//! cr_eff = committed / terminated
//! ```
//!
//! The basic rule moves the item to `P` when `cr < gamma - delta` and back to
//! `O` when `cr > gamma + delta`. With a response-time barrier `beta`, the
//! estimate `rt_est = mean_st * (|Q_w| + 1)` additionally gates the move to
//! `P` and forces a move back to `O` once exceeded.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use parking_lot::Mutex;
use thiserror::Error;

use crate::types::{AbortReason, CcClass, ItemId, Millis, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdaptMode {
    /// Commit rate computed once per fixed window, counters reset afterwards.
    #[default]
    TimeWindow,
    /// Every termination re-evaluates the rules over the trailing window.
    PerTermination,
}

impl FromStr for AdaptMode {
    type Err = AdaptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "time_window" | "timewindow" | "tw" => Ok(AdaptMode::TimeWindow),
            "per_termination" | "pertermination" | "termination" => Ok(AdaptMode::PerTermination),
            other => Err(AdaptError::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for AdaptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AdaptMode::TimeWindow => "time_window",
            AdaptMode::PerTermination => "per_termination",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("invalid adaptation config: {0}")]
    Config(String),
    #[error("commit rate undefined without terminations")]
    NoTerminations,
    #[error("poisson pmf needs lambda > 0, got {0}")]
    Domain(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    pub gamma: f64,
    pub delta: f64,
    /// Response-time barrier in ms; `None` disables it.
    pub beta: Option<f64>,
    pub tw_ms: f64,
    pub mode: AdaptMode,
    /// Weight of the newest sample in the running mean of service times.
    pub st_weight: f64,
    /// If set, a high commit rate moves an item back to `O` only while its
    /// lock queue (holder included) is at most this long.
    pub min_queue: Option<usize>,
    /// Per-termination mode: number of most recent terminations (other than
    /// reclassification aborts) the commit rate is computed over.
    pub recent_window: usize,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            gamma: 0.8,
            delta: 0.1,
            beta: None,
            tw_ms: 100.0,
            mode: AdaptMode::TimeWindow,
            st_weight: 0.2,
            min_queue: None,
            recent_window: 20,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        let bad = |m: &str| Err(AdaptError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.delta >= 0.0 && self.delta < self.gamma) {
            return bad("delta must lie in [0, gamma)");
        }
        if !(self.tw_ms > 0.0) {
            return bad("tw_ms must be positive");
        }
        if self.recent_window == 0 {
            return bad("recent_window must be at least 1");
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) {
                return bad("beta must be non-negative");
            }
        }
        if !(self.st_weight > 0.0 && self.st_weight <= 1.0) {
            return bad("st_weight must lie in (0, 1]");
        }
        Ok(())
    }

    /// Samples per second.
    pub fn sample_rate(&self) -> f64 {
        1000.0 / self.tw_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rule {
    LowCommitRate,
    HighCommitRate,
    LowCommitRateWithinBarrier,
    BarrierExceeded,
    /// Requested through the engine API rather than decided by a rule.
    Manual,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::LowCommitRate => "low-cr",
            Rule::HighCommitRate => "high-cr",
            Rule::LowCommitRateWithinBarrier => "low-cr-within-barrier",
            Rule::BarrierExceeded => "barrier-exceeded",
            Rule::Manual => "manual",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Rule {
    type Err = AdaptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Rule::LowCommitRate,
            Rule::HighCommitRate,
            Rule::LowCommitRateWithinBarrier,
            Rule::BarrierExceeded,
            Rule::Manual,
        ]
        .into_iter()
        .find(|r| r.as_str() == s.trim())
        .ok_or_else(|| AdaptError::Config(format!("unknown rule {s:?}")))
    }
}

/// A class change decided by a controller.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch {
    pub time: Millis,
    pub item: ItemId,
    pub from: CcClass,
    pub to: CcClass,
    pub cr: f64,
    pub rt_est: f64,
    pub rule: Rule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Window {
    pub committed: u64,
    pub terminated: u64,
    pub reclass_aborts: u64,
}

impl Window {
    pub fn record(&mut self, outcome: Outcome) {
        self.terminated += 1;
        match outcome {
            Outcome::Commit => self.committed += 1,
            Outcome::Abort(AbortReason::Reclassification) => self.reclass_aborts += 1,
            Outcome::Abort(_) => {}
        }
    }
}

/// Commit rate of `w`, or `prev` when nothing but reclassification aborts
/// (or nothing at all) terminated.
pub fn compute_cr(w: &Window, prev: f64) -> f64 {
    let denom = w.terminated.saturating_sub(w.reclass_aborts);
    if denom == 0 {
        prev
    } else {
        w.committed as f64 / denom as f64
    }
}

pub fn compute_cr_eff(committed: u64, terminated: u64) -> Result<f64, AdaptError> {
    if terminated == 0 {
        Err(AdaptError::NoTerminations)
    } else {
        Ok(committed as f64 / terminated as f64)
    }
}

pub fn estimate_rt(class: CcClass, mean_st: f64, queue_len: usize) -> f64 {
    match class {
        CcClass::P => mean_st * (queue_len as f64 + 1.0),
        _ => 0.0,
    }
}

pub fn step_basic(class: CcClass, cr: f64, gamma: f64, delta: f64) -> Option<(CcClass, Rule)> {
    match class {
        CcClass::O if cr < gamma - delta => Some((CcClass::P, Rule::LowCommitRate)),
        CcClass::P if cr > gamma + delta => Some((CcClass::O, Rule::HighCommitRate)),
        _ => None,
    }
}

pub fn step_barrier(
    class: CcClass,
    cr: f64,
    rt_est: f64,
    gamma: f64,
    delta: f64,
    beta: f64,
) -> Option<(CcClass, Rule)> {
    let low = cr < gamma - delta;
    match class {
        CcClass::O if low && rt_est < beta => Some((CcClass::P, Rule::LowCommitRateWithinBarrier)),
        CcClass::P if low && rt_est > beta => Some((CcClass::O, Rule::BarrierExceeded)),
        CcClass::P if cr > gamma + delta => Some((CcClass::O, Rule::HighCommitRate)),
        _ => None,
    }
}

/// Probability of `k` arrivals for a Poisson process with mean `lambda`.
pub fn poisson_pmf(lambda: f64, k: u64) -> Result<f64, AdaptError> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(AdaptError::Domain(lambda));
    }
    let ln = k as f64 * lambda.ln() - lambda - ln_factorial(k);
    Ok(ln.exp())
}

fn ln_factorial(k: u64) -> f64 {
    // exact sum is cheap for the sizes used here; Stirling beyond that
    if k < 1024 {
        (2..=k).map(|i| (i as f64).ln()).sum()
    } else {
        let n = k as f64;
        n * n.ln() - n + 0.5 * (2.0 * std::f64::consts::PI * n).ln() + 1.0 / (12.0 * n)
            - 1.0 / (360.0 * n * n * n)
    }
}

/// Price per lost transaction (`r`) and penalty per slow one (`p`).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostModel {
    pub r: f64,
    pub p: f64,
}

/// `(ca, cp)` for a run with `tas` transactions, commit rate `cr` and a
/// fraction `frac_slow` of transactions over the barrier.
pub fn cost_tradeoff(model: CostModel, cr: f64, frac_slow: f64, tas: f64) -> (f64, f64) {
    (model.r * (1.0 - cr) * tas, model.p * frac_slow * tas)
}

/// Point-in-time view of one controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerView {
    pub class: CcClass,
    pub cr: f64,
    pub rt_est: f64,
    pub mean_st: Option<f64>,
    pub last_queue_len: usize,
    pub window: Window,
}

#[derive(Debug, Clone)]
pub struct ItemController {
    class: CcClass,
    window: Window,
    cr: f64,
    mean_st: Option<f64>,
    last_queue_len: usize,
    recent: VecDeque<Outcome>,
}

impl ItemController {
    pub fn new(class: CcClass) -> Self {
        Self {
            class,
            window: Window::default(),
            cr: 1.0,
            mean_st: None,
            last_queue_len: 0,
            recent: VecDeque::new(),
        }
    }

    pub fn view(&self) -> ControllerView {
        ControllerView {
            class: self.class,
            cr: self.cr,
            rt_est: self.rt_est(),
            mean_st: self.mean_st,
            last_queue_len: self.last_queue_len,
            window: self.window,
        }
    }

    pub fn rt_est(&self) -> f64 {
        estimate_rt(self.class, self.mean_st.unwrap_or(0.0), self.last_queue_len)
    }

    pub fn record_termination(
        &mut self,
        cfg: &AdaptationConfig,
        outcome: Outcome,
        service_time: Option<Millis>,
        queue_len: Option<usize>,
    ) {
        self.window.record(outcome);
        if let Some(st) = service_time {
            self.mean_st = Some(match self.mean_st {
                None => st,
                Some(m) => m + cfg.st_weight * (st - m),
            });
        }
        if let Some(q) = queue_len {
            self.last_queue_len = q;
        }
        if cfg.mode == AdaptMode::PerTermination {
            if outcome != Outcome::Abort(AbortReason::Reclassification) {
                self.recent.push_back(outcome);
                if self.recent.len() > cfg.recent_window {
                    self.recent.pop_front();
                }
            }
            let mut w = Window::default();
            for o in &self.recent {
                w.record(*o);
            }
            self.cr = compute_cr(&w, self.cr);
        }
    }

    /// Closes the current time window: recomputes `cr` and resets counters.
    /// Returns whether the window saw any terminations.
    pub fn close_window(&mut self) -> bool {
        let seen = self.window.terminated > 0;
        self.cr = compute_cr(&self.window, self.cr);
        self.window = Window::default();
        seen
    }

    /// Applies the configured rule to the current `cr`.
    pub fn step(
        &mut self,
        cfg: &AdaptationConfig,
        item: &ItemId,
        now: Millis,
        live_queue: usize,
    ) -> Option<Switch> {
        let rt = self.rt_est();
        let decided = match cfg.beta {
            None => step_basic(self.class, self.cr, cfg.gamma, cfg.delta),
            Some(beta) => step_barrier(self.class, self.cr, rt, cfg.gamma, cfg.delta, beta),
        };
        let (to, rule) = decided?;
        if rule == Rule::HighCommitRate && cfg.min_queue.is_some_and(|m| live_queue > m) {
            return None;
        }
        let from = self.class;
        self.class = to;
        self.last_queue_len = 0;
        Some(Switch {
            time: now,
            item: item.clone(),
            from,
            to,
            cr: self.cr,
            rt_est: rt,
            rule,
        })
    }
}

/// All controllers of one engine.
#[derive(Debug)]
pub struct Adapter {
    cfg: AdaptationConfig,
    items: Mutex<HashMap<ItemId, ItemController>>,
}

impl Adapter {
    pub fn new(cfg: AdaptationConfig) -> Result<Self, AdaptError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            items: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &AdaptationConfig {
        &self.cfg
    }

    pub fn register(&self, id: ItemId, class: CcClass) {
        self.items.lock().insert(id, ItemController::new(class));
    }

    pub fn is_tracked(&self, id: &ItemId) -> bool {
        self.items.lock().contains_key(id)
    }

    pub fn view(&self, id: &ItemId) -> Option<ControllerView> {
        self.items.lock().get(id).map(ItemController::view)
    }

    pub fn tracked(&self) -> Vec<ItemId> {
        let mut ids: Vec<_> = self.items.lock().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Records a termination; in per-termination mode the rules run at once.
    /// `apply` runs while the controller state is still locked, so switches of
    /// one item are applied in decision order.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        id: &ItemId,
        now: Millis,
        outcome: Outcome,
        service_time: Option<Millis>,
        queue_len: Option<usize>,
        live_queue: impl FnOnce() -> usize,
        apply: impl FnOnce(&Switch),
    ) -> Option<Switch> {
        let mut items = self.items.lock();
        let c = items.get_mut(id)?;
        c.record_termination(&self.cfg, outcome, service_time, queue_len);
        if self.cfg.mode != AdaptMode::PerTermination {
            return None;
        }
        let s = c.step(&self.cfg, id, now, live_queue())?;
        apply(&s);
        Some(s)
    }

    /// Closes the time window of every controller and runs the rules on the
    /// ones that saw terminations. No-op in per-termination mode.
    pub fn tick(
        &self,
        now: Millis,
        live_queue: impl Fn(&ItemId) -> usize,
        mut apply: impl FnMut(&Switch),
    ) -> Vec<Switch> {
        if self.cfg.mode != AdaptMode::TimeWindow {
            return Vec::new();
        }
        let mut items = self.items.lock();
        let mut ids: Vec<_> = items.keys().cloned().collect();
        ids.sort();
        let mut out = Vec::new();
        for id in ids {
            let c = items.get_mut(&id).expect("listed");
            if c.close_window() {
                if let Some(s) = c.step(&self.cfg, &id, now, live_queue(&id)) {
                    apply(&s);
                    out.push(s);
                }
            }
        }
        out
    }

    /// Forces `id` into `to`. Returns `None` if it is already there or not
    /// tracked.
    pub fn force(&self, id: &ItemId, to: CcClass, now: Millis, apply: impl FnOnce(&Switch)) -> Option<Switch> {
        let mut items = self.items.lock();
        let c = items.get_mut(id)?;
        if c.class == to {
            return None;
        }
        let s = Switch {
            time: now,
            item: id.clone(),
            from: c.class,
            to,
            cr: c.cr,
            rt_est: c.rt_est(),
            rule: Rule::Manual,
        };
        c.class = to;
        c.last_queue_len = 0;
        apply(&s);
        Some(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::item;

    fn w(c: u64, t: u64, r: u64) -> Window {
        Window {
            committed: c,
            terminated: t,
            reclass_aborts: r,
        }
    }

    #[test]
    fn record_counts() {
        let mut win = Window::default();
        win.record(Outcome::Commit);
        assert_eq!(win, w(1, 1, 0));
        win.record(Outcome::Abort(AbortReason::Reclassification));
        assert_eq!(win, w(1, 2, 1));
        win.record(Outcome::Abort(AbortReason::Constraint));
        assert_eq!(win, w(1, 3, 1));
    }

    #[test]
    fn commit_rate_examples() {
        assert_eq!(compute_cr(&w(1, 8, 0), 1.0), 0.125);
        assert_eq!(compute_cr(&w(3, 5, 1), 1.0), 0.75);
        assert_eq!(compute_cr(&w(0, 0, 0), 0.9), 0.9);
        assert_eq!(compute_cr(&w(0, 2, 2), 0.4), 0.4);
    }

    #[test]
    fn effective_commit_rate() {
        assert_eq!(compute_cr_eff(3, 5).unwrap(), 0.6);
        assert_eq!(compute_cr_eff(0, 4).unwrap(), 0.0);
        assert_eq!(compute_cr_eff(0, 0), Err(AdaptError::NoTerminations));
        assert_eq!(compute_cr_eff(7, 9).unwrap(), compute_cr(&w(7, 9, 0), 0.0));
    }

    #[test]
    fn rt_estimate() {
        assert_eq!(estimate_rt(CcClass::P, 100.0, 4), 500.0);
        assert_eq!(estimate_rt(CcClass::P, 250.0, 0), 250.0);
        assert_eq!(estimate_rt(CcClass::O, 250.0, 9), 0.0);
    }

    #[test]
    fn basic_rule() {
        assert_eq!(
            step_basic(CcClass::O, 0.125, 0.8, 0.1),
            Some((CcClass::P, Rule::LowCommitRate))
        );
        assert_eq!(step_basic(CcClass::P, 0.75, 0.8, 0.1), None);
        assert_eq!(
            step_basic(CcClass::P, 1.0, 0.8, 0.1),
            Some((CcClass::O, Rule::HighCommitRate))
        );
    }

    #[test]
    fn barrier_rule() {
        assert_eq!(
            step_barrier(CcClass::O, 0.80, 500.0, 0.9, 0.05, 1000.0),
            Some((CcClass::P, Rule::LowCommitRateWithinBarrier))
        );
        assert_eq!(
            step_barrier(CcClass::P, 0.80, 1200.0, 0.9, 0.05, 1000.0),
            Some((CcClass::O, Rule::BarrierExceeded))
        );
        assert_eq!(
            step_barrier(CcClass::P, 0.96, 0.0, 0.9, 0.05, 1000.0),
            Some((CcClass::O, Rule::HighCommitRate))
        );
        assert_eq!(step_barrier(CcClass::O, 0.80, 1500.0, 0.9, 0.05, 1000.0), None);
    }

    #[test]
    fn poisson_values() {
        assert!((poisson_pmf(1.0, 0).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((poisson_pmf(4.0, 2).unwrap() - 8.0 * (-4.0f64).exp()).abs() < 1e-12);
        let total: f64 = (0..1000).map(|k| poisson_pmf(100.0, k).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(poisson_pmf(0.0, 1).is_err());
        // Stirling branch agrees with the exact sum at the seam
        let exact: f64 = (2..=2000u64).map(|i| (i as f64).ln()).sum();
        assert!((ln_factorial(2000) - exact).abs() < 1e-6);
    }

    #[test]
    fn costs() {
        let m = CostModel { r: 1.0, p: 0.0 };
        assert!((cost_tradeoff(m, 0.6, 0.3, 100.0).0 - 40.0).abs() < 1e-9);
        assert_eq!(cost_tradeoff(m, 1.0, 0.3, 100.0).0, 0.0);
        assert_eq!(cost_tradeoff(m, 0.5, 0.7, 100.0).1, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(AdaptationConfig::default().validate().is_ok());
        let bad = AdaptationConfig {
            delta: 0.9,
            ..AdaptationConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(AdaptationConfig::default().sample_rate(), 10.0);
    }

    #[test]
    fn window_controller_switches_and_resets() {
        let cfg = AdaptationConfig::default();
        let x = item("x");
        let a = Adapter::new(cfg).unwrap();
        a.register(x.clone(), CcClass::O);
        a.record(&x, 10.0, Outcome::Commit, None, None, || 0, |_| {});
        for _ in 0..7 {
            a.record(&x, 20.0, Outcome::Abort(AbortReason::Validation), None, None, || 0, |_| {});
        }
        let s = a.tick(100.0, |_| 0, |_| {});
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].from, s[0].to, s[0].cr), (CcClass::O, CcClass::P, 0.125));
        // empty window: no step
        assert!(a.tick(200.0, |_| 0, |_| {}).is_empty());
        assert_eq!(a.view(&x).unwrap().cr, 0.125);
    }

    #[test]
    fn min_queue_blocks_return_to_optimistic() {
        let cfg = AdaptationConfig {
            min_queue: Some(1),
            ..AdaptationConfig::default()
        };
        let mut c = ItemController::new(CcClass::P);
        c.record_termination(&cfg, Outcome::Commit, Some(50.0), Some(3));
        c.close_window();
        assert!(c.step(&cfg, &item("x"), 100.0, 5).is_none());
        assert!(c.step(&cfg, &item("x"), 100.0, 1).is_some());
    }

    #[test]
    fn service_time_is_ewma() {
        let cfg = AdaptationConfig::default();
        let mut c = ItemController::new(CcClass::P);
        c.record_termination(&cfg, Outcome::Commit, Some(100.0), Some(4));
        assert_eq!(c.rt_est(), 500.0);
        c.record_termination(&cfg, Outcome::Commit, Some(200.0), Some(0));
        assert!((c.view().mean_st.unwrap() - 120.0).abs() < 1e-12);
    }

    #[test]
    fn per_termination_uses_recent_terminations() {
        let cfg = AdaptationConfig {
            mode: AdaptMode::PerTermination,
            recent_window: 3,
            ..AdaptationConfig::default()
        };
        let x = item("x");
        let a = Adapter::new(cfg).unwrap();
        a.register(x.clone(), CcClass::O);
        assert!(a.record(&x, 0.0, Outcome::Commit, None, None, || 0, |_| {}).is_none());
        let s = a
            .record(&x, 10.0, Outcome::Abort(AbortReason::Validation), None, None, || 0, |_| {})
            .unwrap();
        assert_eq!(s.cr, 0.5);
        assert_eq!(a.view(&x).unwrap().class, CcClass::P);
        // reclassification aborts do not enter the window
        a.record(&x, 11.0, Outcome::Abort(AbortReason::Reclassification), None, None, || 0, |_| {});
        assert_eq!(a.view(&x).unwrap().cr, 0.5);
        a.record(&x, 20.0, Outcome::Commit, None, None, || 0, |_| {});
        assert!((a.view(&x).unwrap().cr - 2.0 / 3.0).abs() < 1e-12);
        // the oldest entries fall out
        a.record(&x, 30.0, Outcome::Commit, None, None, || 0, |_| {});
        a.record(&x, 40.0, Outcome::Commit, None, None, || 0, |_| {});
        assert_eq!(a.view(&x).unwrap().class, CcClass::O);
    }

    #[test]
    fn constant_cr_inside_band_never_switches() {
        let cfg = AdaptationConfig::default();
        for class in [CcClass::O, CcClass::P] {
            for cr in [0.71, 0.75, 0.8, 0.85, 0.89] {
                assert_eq!(step_basic(class, cr, cfg.gamma, cfg.delta), None);
            }
        }
    }
}
