use std::borrow::Borrow;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use thiserror::Error;

/// Transaction identifier. Allocated monotonically by the engine, starting at 1.
pub type TxnId = u64;

/// Milliseconds on the engine clock. Virtual clocks produce exact values; the
/// system clock produces fractional milliseconds since engine start.
pub type Millis = f64;

/// Identifier of a stored item. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId(Arc<str>);

impl ItemId {
    pub fn new(key: impl AsRef<str>) -> Result<Self, InvalidItemId> {
        let key = key.as_ref();
        if key.is_empty() {
            return Err(InvalidItemId);
        }
        Ok(Self(Arc::from(key)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("item id must not be empty")]
pub struct InvalidItemId;

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for ItemId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl FromStr for ItemId {
    type Err = InvalidItemId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

/// Shorthand for tests and fixtures where the key is known to be non-empty.
///
/// # Panics
/// Panics on an empty key.
pub fn item(key: &str) -> ItemId {
    ItemId::new(key).expect("non-empty item id")
}

/// Concurrency-control class of an item.
///
/// * `O` optimistic snapshot validation, first committer wins.
/// * `R` reconciliation of commutative deltas, first n committers win.
/// * `P` exclusive lock taken at read time, first reader wins.
/// * `E` escrow reservation at read time, first n readers win.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CcClass {
    O,
    R,
    P,
    E,
}

impl CcClass {
    pub const ALL: [CcClass; 4] = [CcClass::O, CcClass::R, CcClass::P, CcClass::E];

    pub fn as_str(self) -> &'static str {
        match self {
            CcClass::O => "O",
            CcClass::R => "R",
            CcClass::P => "P",
            CcClass::E => "E",
        }
    }

    /// Classes whose conflicts appear in the serialization graph.
    pub fn is_conflict_tracked(self) -> bool {
        matches!(self, CcClass::O | CcClass::P)
    }
}

impl fmt::Display for CcClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown concurrency-control class {0:?}")]
pub struct UnknownClass(pub String);

impl FromStr for CcClass {
    type Err = UnknownClass;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "O" | "o" => Ok(CcClass::O),
            "R" | "r" => Ok(CcClass::R),
            "P" | "p" => Ok(CcClass::P),
            "E" | "e" => Ok(CcClass::E),
            other => Err(UnknownClass(other.to_string())),
        }
    }
}

/// Why a transaction aborted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AbortReason {
    /// An optimistic read was overwritten before commit.
    Validation,
    /// A reconciled or escrowed delta would break the item's constraint.
    Constraint,
    /// A lock request would have closed a wait cycle.
    Deadlock,
    /// An item read optimistically became pessimistic before commit.
    Reclassification,
}

impl AbortReason {
    pub const ALL: [AbortReason; 4] = [
        AbortReason::Validation,
        AbortReason::Constraint,
        AbortReason::Deadlock,
        AbortReason::Reclassification,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AbortReason::Validation => "validation",
            AbortReason::Constraint => "constraint",
            AbortReason::Deadlock => "deadlock",
            AbortReason::Reclassification => "reclassification",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown abort reason {0:?}")]
pub struct UnknownReason(pub String);

impl FromStr for AbortReason {
    type Err = UnknownReason;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AbortReason::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownReason(s.to_string()))
    }
}

/// Final state of a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Commit,
    Abort(AbortReason),
}

impl Outcome {
    pub fn is_commit(self) -> bool {
        matches!(self, Outcome::Commit)
    }

    pub fn reason(self) -> Option<AbortReason> {
        match self {
            Outcome::Commit => None,
            Outcome::Abort(r) => Some(r),
        }
    }
}

/// Stored payload. Numeric values are required for `R` and `E` items; opaque
/// byte payloads are allowed for `O` and `P` items only.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Bytes(Arc<[u8]>),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Bytes(_) => None,
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v.into())
    }
}

impl From<&[u8]> for Value {
    fn from(v: &[u8]) -> Self {
        Value::Bytes(v.into())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Bytes(b) => {
                f.write_str("0x")?;
                for byte in b.iter() {
                    write!(f, "{byte:02x}")?;
                }
                Ok(())
            }
        }
    }
}
