//! Static class derivation from access and semantic properties.
//!
//! Stage one looks at the access profile: mostly-read items with ownership
//! semantics are pessimistic, mostly-read items without it are optimistic, and
//! everything else is ambiguous. Stage two resolves ambiguous items with the
//! semantic properties: escrow if a guarantee is needed on a constrained
//! commutative number, reconciliation if a dependency function exists and the
//! update does not depend on user input, otherwise the optimistic default.

use std::io::{Read, Write};

use thiserror::Error;

use crate::types::CcClass;

/// Access profile. Exactly one of `mr`, `fw`, `un` holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AccessProperties {
    /// mostly read
    pub mr: bool,
    /// frequently written
    pub fw: bool,
    /// unspecified access pattern
    pub un: bool,
    /// ownership
    pub ow: bool,
}

impl AccessProperties {
    pub fn new(mr: bool, fw: bool, un: bool, ow: bool) -> Self {
        Self { mr, fw, un, ow }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let set = [self.mr, self.fw, self.un].iter().filter(|b| **b).count();
        if set == 1 {
            Ok(())
        } else {
            Err(ClassifyError::AccessPartition(*self))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SemanticProperties {
    /// a constraint exists
    pub con: bool,
    /// numeric type
    pub num: bool,
    /// operations commute
    pub com: bool,
    /// a dependency function is known
    pub dep: bool,
    /// update is independent of user input
    pub input_independent: bool,
    /// a read-time guarantee is needed
    pub gua: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage1 {
    P,
    O,
    Ambiguous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassificationResult {
    pub class: CcClass,
    pub ambiguous_stage1: bool,
}

impl ClassificationResult {
    pub fn adaptable(&self) -> bool {
        self.class == CcClass::O
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ClassifyError {
    #[error("exactly one of mr, fw, un must hold, got {0:?}")]
    AccessPartition(AccessProperties),
    #[error("item is ambiguous after the access stage and needs semantic properties")]
    MissingSemantics,
}

pub fn classify_stage1(p: AccessProperties) -> Result<Stage1, ClassifyError> {
    p.validate()?;
    Ok(match (p.mr, p.ow) {
        (true, true) => Stage1::P,
        (true, false) => Stage1::O,
        _ => Stage1::Ambiguous,
    })
}

pub fn classify_stage2(s: SemanticProperties) -> CcClass {
    if s.con && s.num && s.com && s.gua {
        CcClass::E
    } else if s.input_independent && s.dep && s.com {
        CcClass::R
    } else {
        CcClass::O
    }
}

pub fn classify(
    p: AccessProperties,
    s: Option<SemanticProperties>,
) -> Result<ClassificationResult, ClassifyError> {
    match classify_stage1(p)? {
        Stage1::P => Ok(ClassificationResult {
            class: CcClass::P,
            ambiguous_stage1: false,
        }),
        Stage1::O => Ok(ClassificationResult {
            class: CcClass::O,
            ambiguous_stage1: false,
        }),
        Stage1::Ambiguous => {
            let s = s.ok_or(ClassifyError::MissingSemantics)?;
            Ok(ClassificationResult {
                class: classify_stage2(s),
                ambiguous_stage1: true,
            })
        }
    }
}

#[derive(Debug, Error)]
pub enum ClassManifestError {
    #[error("classification csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("classification line {line}: {msg}")]
    Row { line: u64, msg: String },
}

/// One row of a classification manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassRow {
    pub id: String,
    pub access: AccessProperties,
    pub semantics: Option<SemanticProperties>,
}

fn flag(s: &str) -> Result<Option<bool>, String> {
    match s.trim() {
        "" => Ok(None),
        "1" | "true" | "yes" => Ok(Some(true)),
        "0" | "false" | "no" => Ok(Some(false)),
        other => Err(format!("bad flag {other:?}")),
    }
}

/// Reads `id,mr,fw,un,ow,con,num,com,dep,in,gua` rows. The six semantic
/// columns may all be left empty for items that are not ambiguous.
pub fn parse_class_manifest<R: Read>(reader: R) -> Result<Vec<ClassRow>, ClassManifestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |msg: String| ClassManifestError::Row { line, msg };
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        let mut flags = [None; 10];
        for (i, f) in flags.iter_mut().enumerate() {
            *f = flag(rec.get(i + 1).unwrap_or("")).map_err(err)?;
        }
        let req = |i: usize, name: &str| flags[i].ok_or_else(|| err(format!("missing {name}")));
        let access = AccessProperties::new(req(0, "mr")?, req(1, "fw")?, req(2, "un")?, req(3, "ow")?);
        let semantics = if flags[4..].iter().all(Option::is_none) {
            None
        } else {
            Some(SemanticProperties {
                con: req(4, "con")?,
                num: req(5, "num")?,
                com: req(6, "com")?,
                dep: req(7, "dep")?,
                input_independent: req(8, "in")?,
                gua: req(9, "gua")?,
            })
        };
        rows.push(ClassRow {
            id,
            access,
            semantics,
        });
    }
    Ok(rows)
}

/// Classifies every row and writes `id,class`.
pub fn classify_manifest<R: Read, W: Write>(reader: R, out: W) -> Result<(), ClassManifestError> {
    let rows = parse_class_manifest(reader)?;
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["id", "class"])?;
    for (n, row) in rows.iter().enumerate() {
        let res = classify(row.access, row.semantics).map_err(|e| ClassManifestError::Row {
            line: n as u64 + 2,
            msg: format!("{}: {e}", row.id),
        })?;
        wtr.write_record([row.id.as_str(), res.class.as_str()])?;
    }
    wtr.flush().map_err(csv::Error::from)?;
    Ok(())
}
