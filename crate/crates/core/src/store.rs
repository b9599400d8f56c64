//! Versioned in-memory item table.
//!
//! Every item carries its committed value, a version counter starting at 1,
//! its static class (fixed at creation) and its current class (which only
//! adaptable `O` items may change), an optional interval constraint, and the
//! escrow bookkeeping used by class `E`.
//!
//! Each committed install is stamped with a store-wide commit sequence number.
//! Read-only transactions register the sequence number current at their begin
//! and read the newest version not younger than it, which gives them a
//! consistent cut without validation. Versions older than the oldest registered
//! snapshot are pruned on install.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use crate::semantic::EscrowState;
use crate::types::{CcClass, ItemId, Value};

/// Interval bounds on a numeric item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Constraint {
    pub lower: Option<i64>,
    pub upper: Option<i64>,
    pub strict_lower: bool,
    pub strict_upper: bool,
}

impl Constraint {
    pub fn new(
        lower: Option<i64>,
        strict_lower: bool,
        upper: Option<i64>,
        strict_upper: bool,
    ) -> Result<Self, StoreError> {
        let c = Self {
            lower,
            upper,
            strict_lower,
            strict_upper,
        };
        if let (Some(lo), Some(hi)) = (lower, upper) {
            let empty = if strict_lower || strict_upper {
                lo >= hi
            } else {
                lo > hi
            };
            if empty {
                return Err(StoreError::InvalidConstraint(c));
            }
        }
        Ok(c)
    }

    /// `value > bound`
    pub fn greater_than(bound: i64) -> Self {
        Self {
            lower: Some(bound),
            strict_lower: true,
            ..Self::default()
        }
    }

    /// `value >= bound`
    pub fn at_least(bound: i64) -> Self {
        Self {
            lower: Some(bound),
            ..Self::default()
        }
    }

    /// `value <= bound`
    pub fn at_most(bound: i64) -> Self {
        Self {
            upper: Some(bound),
            ..Self::default()
        }
    }

    pub fn satisfied(&self, v: i64) -> bool {
        self.lower_ok(v) && self.upper_ok(v)
    }

    pub fn lower_ok(&self, v: i64) -> bool {
        match self.lower {
            None => true,
            Some(lo) if self.strict_lower => v > lo,
            Some(lo) => v >= lo,
        }
    }

    pub fn upper_ok(&self, v: i64) -> bool {
        match self.upper {
            None => true,
            Some(hi) if self.strict_upper => v < hi,
            Some(hi) => v <= hi,
        }
    }
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lo = match self.lower {
            Some(v) if self.strict_lower => format!("({v}"),
            Some(v) => format!("[{v}"),
            None => "(-inf".to_string(),
        };
        let hi = match self.upper {
            Some(v) if self.strict_upper => format!("{v})"),
            Some(v) => format!("{v}]"),
            None => "+inf)".to_string(),
        };
        write!(f, "{lo}, {hi}")
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("item {0} already exists")]
    DuplicateItem(ItemId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("value {value} violates constraint {constraint} of item {item}")]
    ConstraintViolation {
        item: ItemId,
        value: Value,
        constraint: Constraint,
    },
    #[error("item {item} is at version {actual}, expected {expected}")]
    VersionMismatch {
        item: ItemId,
        expected: u64,
        actual: u64,
    },
    #[error("item {item} has static class {class} and cannot be reclassified")]
    NotAdaptable { item: ItemId, class: CcClass },
    #[error("adaptable items only move between O and P, not to {0}")]
    InvalidTarget(CcClass),
    #[error("item {item} of class {class} needs a numeric value")]
    NonNumeric { item: ItemId, class: CcClass },
    #[error("constraint {0} admits no value")]
    InvalidConstraint(Constraint),
}

/// Read-only view of an item.
#[derive(Debug, Clone, PartialEq)]
pub struct VersionedItem {
    pub id: ItemId,
    pub committed_value: Value,
    pub version: u64,
    pub static_class: CcClass,
    pub current_class: CcClass,
    pub constraint: Option<Constraint>,
    pub adaptable: bool,
}

#[derive(Debug, Clone)]
struct VersionEntry {
    seq: u64,
    value: Value,
    version: u64,
}

/// Mutable per-item state. Guarded by the slot's lock.
#[derive(Debug)]
pub(crate) struct ItemState {
    pub(crate) id: ItemId,
    pub(crate) value: Value,
    pub(crate) version: u64,
    pub(crate) static_class: CcClass,
    pub(crate) current_class: CcClass,
    pub(crate) constraint: Option<Constraint>,
    pub(crate) escrow: EscrowState,
    history: Vec<VersionEntry>,
}

impl ItemState {
    pub(crate) fn adaptable(&self) -> bool {
        self.static_class == CcClass::O
    }

    pub(crate) fn check(&self, value: &Value) -> Result<(), StoreError> {
        check_value(&self.id, self.static_class, self.constraint, value)
    }

    /// Installs a checked value. Caller has already validated it.
    pub(crate) fn install(&mut self, value: Value, seq: u64, min_snapshot: Option<u64>) -> u64 {
        self.version += 1;
        self.value = value.clone();
        self.history.push(VersionEntry {
            seq,
            value,
            version: self.version,
        });
        self.prune(min_snapshot);
        self.version
    }

    fn prune(&mut self, min_snapshot: Option<u64>) {
        let keep_from = match min_snapshot {
            None => self.history.len() - 1,
            Some(s) => self
                .history
                .iter()
                .rposition(|e| e.seq <= s)
                .unwrap_or(0),
        };
        if keep_from > 0 {
            self.history.drain(..keep_from);
        }
    }

    /// Newest (value, version) committed at or before `seq`.
    pub(crate) fn as_of(&self, seq: u64) -> (Value, u64) {
        let entry = self
            .history
            .iter()
            .rev()
            .find(|e| e.seq <= seq)
            .unwrap_or(&self.history[0]);
        (entry.value.clone(), entry.version)
    }

    pub(crate) fn view(&self) -> VersionedItem {
        VersionedItem {
            id: self.id.clone(),
            committed_value: self.value.clone(),
            version: self.version,
            static_class: self.static_class,
            current_class: self.current_class,
            constraint: self.constraint,
            adaptable: self.adaptable(),
        }
    }
}

fn check_value(
    id: &ItemId,
    class: CcClass,
    constraint: Option<Constraint>,
    value: &Value,
) -> Result<(), StoreError> {
    match value {
        Value::Int(v) => {
            if let Some(c) = constraint {
                if !c.satisfied(*v) {
                    return Err(StoreError::ConstraintViolation {
                        item: id.clone(),
                        value: value.clone(),
                        constraint: c,
                    });
                }
            }
            Ok(())
        }
        Value::Bytes(_) => {
            if matches!(class, CcClass::R | CcClass::E) || constraint.is_some() {
                Err(StoreError::NonNumeric {
                    item: id.clone(),
                    class,
                })
            } else {
                Ok(())
            }
        }
    }
}

pub(crate) type Slot = Arc<RwLock<ItemState>>;

#[derive(Debug, Default)]
struct SeqState {
    last: u64,
    // snapshot seq -> number of readers holding it
    active: BTreeMap<u64, usize>,
}

/// The item table. Safe for concurrent use; per-item operations are atomic,
/// cross-item atomicity is left to the transaction engine.
#[derive(Debug, Default)]
pub struct Store {
    items: RwLock<HashMap<ItemId, Slot>>,
    seq: Mutex<SeqState>,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_item(
        &self,
        id: ItemId,
        value: impl Into<Value>,
        class: CcClass,
        constraint: Option<Constraint>,
    ) -> Result<VersionedItem, StoreError> {
        let value = value.into();
        check_value(&id, class, constraint, &value)?;
        let mut items = self.items.write();
        if items.contains_key(&id) {
            return Err(StoreError::DuplicateItem(id));
        }
        let state = ItemState {
            id: id.clone(),
            value: value.clone(),
            version: 1,
            static_class: class,
            current_class: class,
            constraint,
            escrow: EscrowState::default(),
            history: vec![VersionEntry {
                seq: 0,
                value,
                version: 1,
            }],
        };
        let view = state.view();
        items.insert(id, Arc::new(RwLock::new(state)));
        Ok(view)
    }

    pub fn contains(&self, id: &ItemId) -> bool {
        self.items.read().contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.items.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All item ids in canonical (sorted) order.
    pub fn ids(&self) -> Vec<ItemId> {
        let mut ids: Vec<_> = self.items.read().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub(crate) fn slot(&self, id: &ItemId) -> Result<Slot, StoreError> {
        self.items
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownItem(id.clone()))
    }

    pub fn get(&self, id: &ItemId) -> Result<VersionedItem, StoreError> {
        Ok(self.slot(id)?.read().view())
    }

    /// Latest committed value and its version.
    pub fn read_committed(&self, id: &ItemId) -> Result<(Value, u64), StoreError> {
        let slot = self.slot(id)?;
        let s = slot.read();
        Ok((s.value.clone(), s.version))
    }

    pub fn current_class(&self, id: &ItemId) -> Result<CcClass, StoreError> {
        Ok(self.slot(id)?.read().current_class)
    }

    /// Atomically installs a new committed value. With `expected_version` the
    /// install fails unless the item is still at that version.
    pub fn install_version(
        &self,
        id: &ItemId,
        new_value: impl Into<Value>,
        expected_version: Option<u64>,
    ) -> Result<u64, StoreError> {
        let new_value = new_value.into();
        let slot = self.slot(id)?;
        let mut s = slot.write();
        if let Some(expected) = expected_version {
            if s.version != expected {
                return Err(StoreError::VersionMismatch {
                    item: id.clone(),
                    expected,
                    actual: s.version,
                });
            }
        }
        s.check(&new_value)?;
        let (seq, min) = self.begin_commit();
        Ok(s.install(new_value, seq, min))
    }

    /// Changes the current class of an adaptable item. Returns the previous class.
    pub fn set_current_class(&self, id: &ItemId, class: CcClass) -> Result<CcClass, StoreError> {
        let slot = self.slot(id)?;
        let mut s = slot.write();
        set_class(&mut s, class)
    }

    /// Allocates the next commit sequence number. Must be called while every
    /// slot the commit installs into is write-locked.
    pub(crate) fn begin_commit(&self) -> (u64, Option<u64>) {
        let mut seq = self.seq.lock();
        seq.last += 1;
        (seq.last, seq.active.keys().next().copied())
    }

    pub(crate) fn register_snapshot(&self) -> u64 {
        let mut seq = self.seq.lock();
        let s = seq.last;
        *seq.active.entry(s).or_default() += 1;
        s
    }

    pub(crate) fn release_snapshot(&self, s: u64) {
        let mut seq = self.seq.lock();
        if let Some(n) = seq.active.get_mut(&s) {
            *n -= 1;
            if *n == 0 {
                seq.active.remove(&s);
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn retained_versions(&self, id: &ItemId) -> usize {
        self.slot(id).map(|s| s.read().history.len()).unwrap_or(0)
    }

    /// Bulk-loads items from manifest rows.
    pub fn load(&self, specs: &[ItemSpec]) -> Result<(), StoreError> {
        for spec in specs {
            self.create_item(spec.id.clone(), spec.value, spec.class, spec.constraint)?;
        }
        Ok(())
    }
}

pub(crate) fn set_class(s: &mut ItemState, class: CcClass) -> Result<CcClass, StoreError> {
    if !s.adaptable() {
        return Err(StoreError::NotAdaptable {
            item: s.id.clone(),
            class: s.static_class,
        });
    }
    if !matches!(class, CcClass::O | CcClass::P) {
        return Err(StoreError::InvalidTarget(class));
    }
    let prev = s.current_class;
    s.current_class = class;
    Ok(prev)
}

/// One row of the bulk-load manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSpec {
    pub id: ItemId,
    pub class: CcClass,
    pub value: i64,
    pub constraint: Option<Constraint>,
}

impl ItemSpec {
    pub fn new(id: ItemId, class: CcClass, value: i64, constraint: Option<Constraint>) -> Self {
        Self {
            id,
            class,
            value,
            constraint,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("manifest line {line}: {msg}")]
    Row { line: u64, msg: String },
    #[error("manifest: {0}")]
    Store(#[from] StoreError),
}

/// Parses `id,class,initial_value,lower,upper` rows (header required).
///
/// Bounds are optional. A bare number is inclusive; `>n` / `<n` make it strict,
/// `>=n` / `<=n` are accepted as explicit inclusive forms.
pub fn parse_manifest<R: Read>(reader: R) -> Result<Vec<ItemSpec>, ManifestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| ManifestError::Row { line, msg };
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let id = ItemId::new(field(0)).map_err(|e| err(e.to_string()))?;
        let class: CcClass = field(1).parse().map_err(|e: crate::types::UnknownClass| err(e.to_string()))?;
        let value: i64 = field(2)
            .parse()
            .map_err(|_| err(format!("bad initial value {:?}", field(2))))?;
        let (lower, strict_lower) = parse_bound(field(3), '>').map_err(err)?;
        let (upper, strict_upper) = parse_bound(field(4), '<').map_err(err)?;
        let constraint = if lower.is_none() && upper.is_none() {
            None
        } else {
            Some(Constraint::new(lower, strict_lower, upper, strict_upper)?)
        };
        out.push(ItemSpec {
            id,
            class,
            value,
            constraint,
        });
    }
    Ok(out)
}

fn parse_bound(s: &str, strict_marker: char) -> Result<(Option<i64>, bool), String> {
    if s.is_empty() {
        return Ok((None, false));
    }
    let (rest, strict) = if let Some(r) = s.strip_prefix(&format!("{strict_marker}=")) {
        (r, false)
    } else if let Some(r) = s.strip_prefix(strict_marker) {
        (r, true)
    } else {
        (s, false)
    };
    rest.trim()
        .parse::<i64>()
        .map(|v| (Some(v), strict))
        .map_err(|_| format!("bad bound {s:?}"))
}

/// Writes items back in manifest format.
pub fn write_manifest<W: std::io::Write>(specs: &[ItemSpec], w: W) -> Result<(), ManifestError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["id", "class", "initial_value", "lower", "upper"])?;
    for s in specs {
        let (lo, hi) = match s.constraint {
            None => (String::new(), String::new()),
            Some(c) => (
                c.lower
                    .map(|v| if c.strict_lower { format!(">{v}") } else { v.to_string() })
                    .unwrap_or_default(),
                c.upper
                    .map(|v| if c.strict_upper { format!("<{v}") } else { v.to_string() })
                    .unwrap_or_default(),
            ),
        };
        wtr.write_record([
            s.id.as_str(),
            s.class.as_str(),
            &s.value.to_string(),
            &lo,
            &hi,
        ])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
