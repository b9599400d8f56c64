//! Run configuration: `key = value` lines, `#` starts a comment.
//!
//! ```text
//! lambda = 9, 14, 19
//! dt_min = 0
//! dt_max = 0
//! gamma = 0.9
//! delta = 0.05
//! template = single
//! seed = 7
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::adapt::{AdaptMode, AdaptationConfig};
use crate::types::CcClass;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`")]
    Value { line: usize, key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngineMode {
    /// Items keep their assigned classes, adaptation as configured.
    Orpe,
    /// Every item is optimistic and nothing adapts.
    SiOnly,
}

impl FromStr for EngineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "orpe" => Ok(Self::Orpe),
            "si_only" | "si" => Ok(Self::SiOnly),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for EngineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Orpe => "orpe",
            Self::SiOnly => "si_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// Every transaction reads and updates one hot item.
    SingleItem,
    /// Shuffled 100-card deck of TPC-C style transactions.
    TpccDeck,
}

impl FromStr for TemplateKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "single" | "single_item" => Ok(Self::SingleItem),
            "tpcc" | "tpcc_deck" => Ok(Self::TpccDeck),
            _ => Err(s.to_string()),
        }
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingleItem => "single",
            Self::TpccDeck => "tpcc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    Virtual,
    Realtime,
}

impl FromStr for ClockMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "virtual" => Ok(Self::Virtual),
            "realtime" | "real" => Ok(Self::Realtime),
            _ => Err(s.to_string()),
        }
    }
}

/// One epoch of constant arrival rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub duration_ms: f64,
    /// Arrivals per second.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochProfile {
    pub epochs: Vec<Epoch>,
    pub dt_min: f64,
    pub dt_max: f64,
    pub template: TemplateKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Arrival rate per epoch.
    pub lambdas: Vec<f64>,
    /// Number of epochs; the lambda list repeats if it is shorter.
    pub epochs: Option<usize>,
    pub epoch_ms: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub adaptation: bool,
    pub gamma: f64,
    pub delta: f64,
    pub beta: Option<f64>,
    pub tw_ms: f64,
    pub mode: AdaptMode,
    pub st_weight: f64,
    pub min_queue: Option<usize>,
    pub recent_window: usize,
    pub template: TemplateKind,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub engine_mode: EngineMode,
    pub clock: ClockMode,
    /// Cost of one read before the next step.
    pub read_ms: f64,
    /// Time between write submission and the commit decision.
    pub write_ms: f64,
    /// Class of the hot item of the single-item template.
    pub initial_class: CcClass,
    pub snapshot_reads: bool,
    /// Item whose class and `rt_est` are sampled into the time series.
    pub observe: Option<String>,
    /// Stops spawning after this many transactions.
    pub max_tas: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let a = AdaptationConfig::default();
        Self {
            lambdas: vec![10.0],
            epochs: None,
            epoch_ms: 1000.0,
            dt_min: 0.0,
            dt_max: 0.0,
            adaptation: true,
            gamma: a.gamma,
            delta: a.delta,
            beta: a.beta,
            tw_ms: a.tw_ms,
            mode: a.mode,
            st_weight: a.st_weight,
            min_queue: a.min_queue,
            recent_window: a.recent_window,
            template: TemplateKind::SingleItem,
            seed: 1,
            out_dir: None,
            engine_mode: EngineMode::Orpe,
            clock: ClockMode::Virtual,
            read_ms: 0.1,
            write_ms: 0.1,
            initial_class: CcClass::O,
            snapshot_reads: false,
            observe: None,
            max_tas: None,
        }
    }
}

fn parse_list(v: &str) -> Option<Vec<f64>> {
    let v = v.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']']);
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().ok())
        .collect()
}

fn parse_optional<T: FromStr>(v: &str) -> Option<Option<T>> {
    match v {
        "none" | "off" | "disabled" | "" => Some(None),
        _ => v.parse().ok().map(Some),
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Some(true),
        "false" | "off" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (k, v) = (k.trim(), v.trim());
            let bad = || ConfigError::Value {
                line,
                key: k.to_string(),
                value: v.to_string(),
            };
            match k {
                "lambda" | "lambdas" => c.lambdas = parse_list(v).ok_or_else(bad)?,
                "epochs" => c.epochs = Some(v.parse().map_err(|_| bad())?),
                "epoch_ms" => c.epoch_ms = v.parse().map_err(|_| bad())?,
                "dt_min" => c.dt_min = v.parse().map_err(|_| bad())?,
                "dt_max" => c.dt_max = v.parse().map_err(|_| bad())?,
                "adaptation" => c.adaptation = parse_bool(v).ok_or_else(bad)?,
                "gamma" => c.gamma = v.parse().map_err(|_| bad())?,
                "delta" => c.delta = v.parse().map_err(|_| bad())?,
                "beta" => c.beta = parse_optional(v).ok_or_else(bad)?,
                "tw_ms" => c.tw_ms = v.parse().map_err(|_| bad())?,
                "mode" => c.mode = v.parse().map_err(|_| bad())?,
                "st_weight" => c.st_weight = v.parse().map_err(|_| bad())?,
                "min_queue" => c.min_queue = parse_optional(v).ok_or_else(bad)?,
                "recent_window" => c.recent_window = v.parse().map_err(|_| bad())?,
                "template" => c.template = v.parse().map_err(|_| bad())?,
                "seed" => c.seed = v.parse().map_err(|_| bad())?,
                "out_dir" => c.out_dir = Some(PathBuf::from(v)),
                "engine_mode" => c.engine_mode = v.parse().map_err(|_| bad())?,
                "clock" => c.clock = v.parse().map_err(|_| bad())?,
                "read_ms" => c.read_ms = v.parse().map_err(|_| bad())?,
                "write_ms" => c.write_ms = v.parse().map_err(|_| bad())?,
                "initial_class" => c.initial_class = v.parse().map_err(|_| bad())?,
                "snapshot_reads" => c.snapshot_reads = parse_bool(v).ok_or_else(bad)?,
                "observe" => c.observe = Some(v.to_string()),
                "max_tas" => c.max_tas = parse_optional(v).ok_or_else(bad)?,
                _ => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: k.to_string(),
                    })
                }
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.lambdas.is_empty() {
            return invalid("lambda list is empty");
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return invalid("lambda must be finite and >= 0");
        }
        if !(self.dt_min >= 0.0 && self.dt_min <= self.dt_max) {
            return invalid("need 0 <= dt_min <= dt_max");
        }
        if !(self.epoch_ms > 0.0) {
            return invalid("epoch_ms must be positive");
        }
        if !(self.read_ms >= 0.0 && self.write_ms >= 0.0) {
            return invalid("operation costs must be >= 0");
        }
        if self.initial_class != CcClass::O && self.initial_class != CcClass::P {
            return invalid("initial_class must be O or P");
        }
        self.adaptation_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn adaptation_config(&self) -> AdaptationConfig {
        AdaptationConfig {
            gamma: self.gamma,
            delta: self.delta,
            beta: self.beta,
            tw_ms: self.tw_ms,
            mode: self.mode,
            st_weight: self.st_weight,
            min_queue: self.min_queue,
            recent_window: self.recent_window,
        }
    }

    /// Adaptation settings the engine runs with, `None` if nothing adapts.
    pub fn effective_adaptation(&self) -> Option<AdaptationConfig> {
        (self.adaptation && self.engine_mode == EngineMode::Orpe).then(|| self.adaptation_config())
    }

    pub fn profile(&self) -> EpochProfile {
        let n = self.epochs.unwrap_or(self.lambdas.len());
        EpochProfile {
            epochs: (0..n)
                .map(|i| Epoch {
                    duration_ms: self.epoch_ms,
                    lambda: self.lambdas[i % self.lambdas.len()],
                })
                .collect(),
            dt_min: self.dt_min,
            dt_max: self.dt_max,
            template: self.template,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_documented_keys() {
        let c = RunConfig::parse(
            "# test one\nepochs = 3\nlambda = (9, 14, 19)\ndt_min = 0\ndt_max = 0\n\
             gamma = 0.9\ndelta = 0.05\nbeta = 1000\ntw_ms = 100\nmode = per_termination\n\
             template = tpcc\nseed = 42\nout_dir = out/t1\nengine_mode = si_only\n",
        )
        .unwrap();
        assert_eq!(c.lambdas, vec![9.0, 14.0, 19.0]);
        assert_eq!(c.epochs, Some(3));
        assert_eq!(c.beta, Some(1000.0));
        assert_eq!(c.mode, AdaptMode::PerTermination);
        assert_eq!(c.template, TemplateKind::TpccDeck);
        assert_eq!(c.engine_mode, EngineMode::SiOnly);
        assert_eq!(c.out_dir, Some(PathBuf::from("out/t1")));
        assert!(c.effective_adaptation().is_none());
    }

    #[test]
    fn profile_repeats_short_lambda_list() {
        let c = RunConfig::parse("lambda = 80\nepochs = 3\n").unwrap();
        let p = c.profile();
        assert_eq!(p.epochs.len(), 3);
        assert!(p.epochs.iter().all(|e| e.lambda == 80.0 && e.duration_ms == 1000.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("what"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(
            RunConfig::parse("colour = red"),
            Err(ConfigError::UnknownKey { .. })
        ));
        assert!(matches!(RunConfig::parse("gamma = x"), Err(ConfigError::Value { .. })));
        assert!(matches!(
            RunConfig::parse("dt_min = 5\ndt_max = 1"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(RunConfig::parse("lambda = -1"), Err(ConfigError::Invalid(_))));
        assert!(matches!(RunConfig::parse("delta = 0.9"), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn beta_can_be_disabled() {
        assert_eq!(RunConfig::parse("beta = none").unwrap().beta, None);
        assert_eq!(RunConfig::parse("min_queue = 1").unwrap().min_queue, Some(1));
    }
}
