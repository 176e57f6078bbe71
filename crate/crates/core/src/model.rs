//! Study configuration, patient records and datasets.
//!
//! A study is a set of therapies (atomic treatment components), a set of
//! arms built from one or two of those components, and a feature space of
//! baseline measurements grouped into questionnaire blocks. Records carry
//! optional feature values so that single cells or whole blocks can be
//! missing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeding;

pub const COL_PATIENT: &str = "patient_id";
pub const COL_ARM: &str = "arm";
pub const COL_BASELINE: &str = "q_baseline";
pub const COL_FINAL: &str = "q_final";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Therapy {
    pub id: String,
}

impl Therapy {
    pub fn new(id: impl Into<String>) -> Self {
        Therapy { id: id.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arm {
    pub id: String,
    pub components: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requires_eligibility: Option<String>,
}

impl Arm {
    pub fn new(id: impl Into<String>, components: &[&str]) -> Self {
        Arm {
            id: id.into(),
            components: components.iter().map(|c| c.to_string()).collect(),
            requires_eligibility: None,
        }
    }

    pub fn requiring(mut self, flag: impl Into<String>) -> Self {
        self.requires_eligibility = Some(flag.into());
        self
    }

    pub fn contains(&self, therapy: &str) -> bool {
        self.components.iter().any(|c| c == therapy)
    }

    pub fn is_combination(&self) -> bool {
        self.components.len() > 1
    }

    /// Number of components shared with `other`.
    pub fn overlap(&self, other: &Arm) -> usize {
        self.components.iter().filter(|c| other.contains(c)).count()
    }

    /// The other component of a two-component arm, if `therapy` is one of them.
    pub fn companion_of(&self, therapy: &str) -> Option<&str> {
        if !self.contains(therapy) {
            return None;
        }
        self.components
            .iter()
            .find(|c| c.as_str() != therapy)
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Ordinal,
    Categorical,
    Binary,
}

impl FeatureKind {
    fn check(self, v: f64) -> std::result::Result<(), &'static str> {
        if !v.is_finite() {
            return Err("value is not finite");
        }
        match self {
            FeatureKind::Numeric => Ok(()),
            FeatureKind::Ordinal | FeatureKind::Categorical if v.fract() != 0.0 => Err("expected an integer code"),
            FeatureKind::Categorical if v < 0.0 => Err("categorical codes are non-negative"),
            FeatureKind::Binary if v != 0.0 && v != 1.0 => Err("expected 0 or 1"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub block: String,
}

impl Feature {
    pub fn new(name: impl Into<String>, kind: FeatureKind, block: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind,
            block: block.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub features: Vec<Feature>,
    #[serde(default)]
    pub eligibility_flags: Vec<String>,
}

impl FeatureSpace {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    /// Questionnaire blocks in order of first appearance.
    pub fn blocks(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for f in &self.features {
            if !seen.contains(&f.block) {
                seen.push(f.block.clone());
            }
        }
        seen
    }
}

#[derive(Deserialize, Serialize)]
struct RawStudy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    therapies: Option<Vec<Therapy>>,
    arms: Vec<Arm>,
    features: Vec<Feature>,
    #[serde(default)]
    eligibility_flags: Vec<String>,
}

/// Therapies, arms and feature space of one study. Validated on
/// construction; immutable afterwards.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawStudy", into = "RawStudy")]
pub struct StudyConfig {
    therapies: Vec<Therapy>,
    arms: Vec<Arm>,
    feature_space: FeatureSpace,
}

impl TryFrom<RawStudy> for StudyConfig {
    type Error = Error;

    fn try_from(raw: RawStudy) -> Result<Self> {
        let space = FeatureSpace {
            features: raw.features,
            eligibility_flags: raw.eligibility_flags,
        };
        let therapies = match raw.therapies {
            Some(t) => t,
            None => {
                let mut t: Vec<Therapy> = Vec::new();
                for arm in &raw.arms {
                    for c in &arm.components {
                        if !t.iter().any(|x| &x.id == c) {
                            t.push(Therapy::new(c.clone()));
                        }
                    }
                }
                t
            }
        };
        StudyConfig::new(therapies, raw.arms, space)
    }
}

impl From<StudyConfig> for RawStudy {
    fn from(s: StudyConfig) -> Self {
        RawStudy {
            therapies: Some(s.therapies),
            arms: s.arms,
            features: s.feature_space.features,
            eligibility_flags: s.feature_space.eligibility_flags,
        }
    }
}

impl StudyConfig {
    pub fn new(therapies: Vec<Therapy>, arms: Vec<Arm>, feature_space: FeatureSpace) -> Result<Self> {
        let bad = |m: String| Err(Error::Study(m));

        let mut tids = HashSet::new();
        for t in &therapies {
            if t.id.is_empty() {
                return bad("empty therapy id".into());
            }
            if !tids.insert(t.id.as_str()) {
                return bad(format!("duplicate therapy `{}`", t.id));
            }
        }
        if arms.is_empty() {
            return bad("a study needs at least one arm".into());
        }

        let flags: HashSet<&str> = feature_space.eligibility_flags.iter().map(String::as_str).collect();
        if flags.len() != feature_space.eligibility_flags.len() {
            return bad("duplicate eligibility flag".into());
        }

        let mut aids = HashSet::new();
        let mut sets: HashSet<BTreeSet<&str>> = HashSet::new();
        for arm in &arms {
            if arm.id.is_empty() {
                return bad("empty arm id".into());
            }
            if !aids.insert(arm.id.as_str()) {
                return bad(format!("duplicate arm `{}`", arm.id));
            }
            let n = arm.components.len();
            if !(1..=2).contains(&n) {
                return bad(format!("arm `{}` has {n} components (expected 1 or 2)", arm.id));
            }
            let set: BTreeSet<&str> = arm.components.iter().map(String::as_str).collect();
            if set.len() != n {
                return bad(format!("arm `{}` repeats a component", arm.id));
            }
            for c in &arm.components {
                if !tids.contains(c.as_str()) {
                    return bad(format!("arm `{}` references unknown therapy `{c}`", arm.id));
                }
            }
            if !sets.insert(set) {
                return bad(format!("arm `{}` duplicates another arm's components", arm.id));
            }
            if let Some(flag) = &arm.requires_eligibility {
                if !flags.contains(flag.as_str()) {
                    return bad(format!("arm `{}` requires undeclared flag `{flag}`", arm.id));
                }
            }
        }

        let reserved = [COL_PATIENT, COL_ARM, COL_BASELINE, COL_FINAL];
        let mut names = HashSet::new();
        for flag in &feature_space.eligibility_flags {
            if reserved.contains(&flag.as_str()) {
                return bad(format!("flag `{flag}` collides with a reserved column"));
            }
            names.insert(flag.as_str());
        }
        for f in &feature_space.features {
            if f.name.is_empty() || f.block.is_empty() {
                return bad("features need a name and a block".into());
            }
            if reserved.contains(&f.name.as_str()) || !names.insert(f.name.as_str()) {
                return bad(format!("feature name `{}` is not unique", f.name));
            }
        }

        Ok(StudyConfig {
            therapies,
            arms,
            feature_space,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study config serializes")
    }

    pub fn therapies(&self) -> &[Therapy] {
        &self.therapies
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn feature_space(&self) -> &FeatureSpace {
        &self.feature_space
    }

    pub fn arm(&self, id: &str) -> Result<&Arm> {
        self.arms
            .iter()
            .find(|a| a.id == id)
            .ok_or_else(|| Error::UnknownArm(id.to_string()))
    }

    pub fn has_therapy(&self, id: &str) -> bool {
        self.therapies.iter().any(|t| t.id == id)
    }

    /// Short content hash used to tie models and reports to their study.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("study config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    /// One entry per feature of the study's feature space, `None` = missing.
    pub features: Vec<Option<f64>>,
    pub eligibility: BTreeMap<String, bool>,
    pub arm_assigned: String,
    pub q_baseline: f64,
    pub q_final: Option<f64>,
}

impl PatientRecord {
    pub fn flag(&self, name: &str) -> bool {
        self.eligibility.get(name).copied().unwrap_or(false)
    }

    pub fn is_eligible(&self, arm: &Arm) -> bool {
        arm.requires_eligibility.as_deref().is_none_or(|f| self.flag(f))
    }

    pub fn is_complete(&self) -> bool {
        self.q_final.is_some()
    }

    /// Baseline minus final score; `None` for dropouts.
    pub fn improvement(&self) -> Option<f64> {
        self.q_final.map(|f| self.q_baseline - f)
    }

    pub fn observed_count(&self) -> usize {
        self.features.iter().filter(|v| v.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    study: Arc<StudyConfig>,
    records: Vec<PatientRecord>,
}

impl Dataset {
    /// Validates the records. Absent eligibility flags are stored as `false`.
    pub fn new(study: Arc<StudyConfig>, mut records: Vec<PatientRecord>) -> Result<Self> {
        let space = study.feature_space();
        let mut ids = HashSet::new();
        for r in &mut records {
            for flag in &space.eligibility_flags {
                r.eligibility.entry(flag.clone()).or_insert(false);
            }
        }
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::DuplicatePatient(r.id.clone()));
            }
            if r.features.len() != space.len() {
                return Err(Error::record(
                    &r.id,
                    format!("{} feature values for {} features", r.features.len(), space.len()),
                ));
            }
            for (v, f) in r.features.iter().zip(&space.features) {
                if let Some(v) = v {
                    f.kind
                        .check(*v)
                        .map_err(|m| Error::record(&r.id, format!("feature `{}`: {m}", f.name)))?;
                }
            }
            for flag in r.eligibility.keys() {
                if !space.eligibility_flags.contains(flag) {
                    return Err(Error::record(&r.id, format!("undeclared flag `{flag}`")));
                }
            }
            let arm = study.arm(&r.arm_assigned)?;
            if !r.is_eligible(arm) {
                return Err(Error::record(
                    &r.id,
                    format!(
                        "assigned arm `{}` requires `{}`",
                        arm.id,
                        arm.requires_eligibility.as_deref().unwrap_or_default()
                    ),
                ));
            }
            if !r.q_baseline.is_finite() || r.q_final.is_some_and(|q| !q.is_finite()) {
                return Err(Error::record(&r.id, "outcome scores must be finite"));
            }
        }
        Ok(Dataset { study, records })
    }

    pub fn empty(study: Arc<StudyConfig>) -> Self {
        Dataset {
            study,
            records: Vec::new(),
        }
    }

    pub fn study(&self) -> &StudyConfig {
        &self.study
    }

    pub fn study_arc(&self) -> &Arc<StudyConfig> {
        &self.study
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&PatientRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Keeps records for which `keep` holds, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&PatientRecord) -> bool) -> Dataset {
        Dataset {
            study: self.study.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
        }
    }

    /// Records whose ids are in `ids`, in dataset order.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let out = self.filter(|r| wanted.contains(r.id.as_str()));
        if out.len() != wanted.len() {
            let have: HashSet<&str> = out.records.iter().map(|r| r.id.as_str()).collect();
            let missing = ids
                .iter()
                .find(|i| !have.contains(i.as_str()))
                .cloned()
                .unwrap_or_default();
            return Err(Error::UnknownPatient(missing));
        }
        Ok(out)
    }

    /// Concatenates two datasets over the same study.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        if self.study != other.study {
            return Err(Error::Mismatch("datasets belong to different studies".into()));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(self.study.clone(), records)
    }

    pub fn arm_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> = self.study.arms().iter().map(|a| (a.id.clone(), 0)).collect();
        for r in &self.records {
            *counts.entry(r.arm_assigned.clone()).or_default() += 1;
        }
        counts
    }
}

/// Keeps only records that have a final outcome.
pub fn complete_case_filter(ds: &Dataset) -> Dataset {
    ds.filter(PatientRecord::is_complete)
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

fn fmt_num(v: f64) -> String {
    // `Display` for f64 is the shortest representation that round-trips.
    format!("{v}")
}

fn parse_num(s: &str) -> Option<std::result::Result<f64, ()>> {
    let s = s.trim();
    if s.is_empty() || s == "NA" {
        return None;
    }
    Some(s.parse::<f64>().map_err(|_| ()))
}

fn parse_flag(s: &str) -> std::result::Result<bool, ()> {
    match s.trim() {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "" | "NA" | "0" | "false" | "FALSE" | "False" => Ok(false),
        _ => Err(()),
    }
}

/// Canonical header: `patient_id,arm,<flags>,q_baseline,q_final,<features>`.
pub fn dataset_header(study: &StudyConfig) -> Vec<String> {
    let space = study.feature_space();
    let mut h = vec![COL_PATIENT.to_string(), COL_ARM.to_string()];
    h.extend(space.eligibility_flags.iter().cloned());
    h.push(COL_BASELINE.into());
    h.push(COL_FINAL.into());
    h.extend(space.names());
    h
}

/// Writes `ds` as CSV. Comment lines (prefixed `# `) are emitted first.
pub fn write_dataset<W: Write>(ds: &Dataset, comments: &[String], mut out: W) -> Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(ds.study()))?;
    let flags = &ds.study().feature_space().eligibility_flags;
    for r in ds.records() {
        let mut row = vec![r.id.clone(), r.arm_assigned.clone()];
        row.extend(flags.iter().map(|f| if r.flag(f) { "1" } else { "0" }.to_string()));
        row.push(fmt_num(r.q_baseline));
        row.push(r.q_final.map(fmt_num).unwrap_or_default());
        row.extend(r.features.iter().map(|v| v.map(fmt_num).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &Dataset, comments: &[String], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, comments, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

struct Columns {
    id: usize,
    arm: Option<usize>,
    baseline: Option<usize>,
    q_final: Option<usize>,
    flags: Vec<Option<usize>>,
    features: Vec<Option<usize>>,
}

fn map_columns(header: &csv::StringRecord, study: &StudyConfig, strict: bool) -> Result<Columns> {
    let mut index = BTreeMap::new();
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if index.insert(h.to_string(), i).is_some() {
            return Err(Error::Cell {
                row: 0,
                column: h.to_string(),
                message: "duplicate column".into(),
            });
        }
    }
    let need = |name: &str| {
        index.get(name).copied().ok_or_else(|| Error::Cell {
            row: 0,
            column: name.to_string(),
            message: "missing column".into(),
        })
    };
    let space = study.feature_space();
    let cols = if strict {
        let expected = dataset_header(study);
        for name in &expected {
            need(name)?;
        }
        if let Some(extra) = index.keys().find(|k| !expected.contains(k)) {
            return Err(Error::Cell {
                row: 0,
                column: extra.clone(),
                message: "unexpected column".into(),
            });
        }
        Columns {
            id: need(COL_PATIENT)?,
            arm: Some(need(COL_ARM)?),
            baseline: Some(need(COL_BASELINE)?),
            q_final: Some(need(COL_FINAL)?),
            flags: space.eligibility_flags.iter().map(|f| index.get(f).copied()).collect(),
            features: space.features.iter().map(|f| index.get(&f.name).copied()).collect(),
        }
    } else {
        let known: HashSet<String> = dataset_header(study).into_iter().collect();
        if let Some(extra) = index.keys().find(|k| !known.contains(*k)) {
            return Err(Error::UnknownFeature(extra.clone()));
        }
        Columns {
            id: need(COL_PATIENT)?,
            arm: index.get(COL_ARM).copied(),
            baseline: index.get(COL_BASELINE).copied(),
            q_final: index.get(COL_FINAL).copied(),
            flags: space.eligibility_flags.iter().map(|f| index.get(f).copied()).collect(),
            features: space.features.iter().map(|f| index.get(&f.name).copied()).collect(),
        }
    };
    Ok(cols)
}

fn parse_row(
    rec: &csv::StringRecord,
    row: u64,
    header: &csv::StringRecord,
    cols: &Columns,
    study: &StudyConfig,
    strict: bool,
) -> Result<PatientRecord> {
    let cell_err = |col: usize, message: &str| Error::Cell {
        row,
        column: header.get(col).unwrap_or("?").to_string(),
        message: message.to_string(),
    };
    let get = |col: usize| rec.get(col).unwrap_or("");
    let space = study.feature_space();

    let id = get(cols.id).trim().to_string();
    if id.is_empty() {
        return Err(cell_err(cols.id, "empty patient id"));
    }

    let arm_assigned = match cols.arm {
        Some(c) => get(c).trim().to_string(),
        None => String::new(),
    };
    if strict {
        let c = cols.arm.expect("strict mapping has an arm column");
        if arm_assigned.is_empty() {
            return Err(cell_err(c, "empty arm"));
        }
        study.arm(&arm_assigned)?;
    }

    let mut eligibility = BTreeMap::new();
    for (flag, col) in space.eligibility_flags.iter().zip(&cols.flags) {
        let v = match col {
            Some(c) => parse_flag(get(*c)).map_err(|_| cell_err(*c, "expected 0/1/true/false"))?,
            None => false,
        };
        eligibility.insert(flag.clone(), v);
    }

    let q_baseline = match cols.baseline {
        Some(c) => match parse_num(get(c)) {
            Some(Ok(v)) if v.is_finite() => Some(v),
            Some(_) => return Err(cell_err(c, "not a finite number")),
            None => None,
        },
        None => None,
    };
    let q_baseline = match (q_baseline, strict) {
        (Some(v), _) => v,
        (None, true) => return Err(cell_err(cols.baseline.unwrap(), "q_baseline is required")),
        (None, false) => f64::NAN,
    };
    let q_final = match cols.q_final {
        Some(c) => match parse_num(get(c)) {
            Some(Ok(v)) if v.is_finite() => Some(v),
            Some(_) => return Err(cell_err(c, "not a finite number")),
            None => None,
        },
        None => None,
    };

    let mut features = Vec::with_capacity(space.len());
    for (f, col) in space.features.iter().zip(&cols.features) {
        let v = match col {
            Some(c) => match parse_num(get(*c)) {
                Some(Ok(v)) => {
                    f.kind.check(v).map_err(|m| cell_err(*c, m))?;
                    Some(v)
                }
                Some(Err(())) => return Err(cell_err(*c, "not a number")),
                None => None,
            },
            None => None,
        };
        features.push(v);
    }

    Ok(PatientRecord {
        id,
        features,
        eligibility,
        arm_assigned,
        q_baseline,
        q_final,
    })
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::None)
        .from_reader(input)
}

/// Parses a dataset CSV. Empty cells and `NA` are missing values.
pub fn read_dataset<R: Read>(input: R, study: Arc<StudyConfig>) -> Result<Dataset> {
    let mut rdr = csv_reader(input);
    let header = rdr.headers()?.clone();
    let cols = map_columns(&header, &study, true)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        let r = parse_row(&rec, row, &header, &cols, &study, true)?;
        if !seen.insert(r.id.clone()) {
            return Err(Error::DuplicatePatient(r.id));
        }
        records.push(r);
    }
    Dataset::new(study, records)
}

pub fn load_dataset(path: impl AsRef<Path>, study: Arc<StudyConfig>) -> Result<Dataset> {
    read_dataset(std::fs::File::open(path)?, study)
}

/// Parses patient rows for ranking: `patient_id` plus any subset of the
/// flag and feature columns. `arm`, `q_baseline` and `q_final` are
/// optional and ignored when empty.
pub fn read_patients<R: Read>(input: R, study: &StudyConfig) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv_reader(input);
    let header = rdr.headers()?.clone();
    let cols = map_columns(&header, study, false)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        out.push(parse_row(&rec, i as u64 + 1, &header, &cols, study, false)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    #[default]
    Arm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub holdout_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub stratify_by: Stratum,
}

impl SplitSpec {
    pub fn new(holdout_fraction: f64, seed: u64) -> Result<Self> {
        let s = SplitSpec {
            holdout_fraction,
            seed,
            stratify_by: Stratum::Arm,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "holdout_fraction {} is outside (0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Dataset,
    pub holdout: Dataset,
    pub warnings: Vec<String>,
}

/// Number of holdout records per arm (arms in lexicographic order).
///
/// Each arm gets `floor(f * n)` (at least 1 and at most `n - 1` when
/// `n >= 2`); the records still missing to reach `round(f * N)` overall are
/// handed out one per arm, in lexicographic arm order, to arms whose share
/// had a fractional remainder.
pub fn holdout_allocation(sizes: &BTreeMap<String, usize>, fraction: f64) -> BTreeMap<String, usize> {
    let total: usize = sizes.values().sum();
    let target = (fraction * total as f64).round() as usize;
    let mut alloc: BTreeMap<String, usize> = BTreeMap::new();
    for (arm, &n) in sizes {
        let mut h = (fraction * n as f64).floor() as usize;
        if n >= 2 {
            h = h.clamp(1, n - 1);
        } else {
            h = 0;
        }
        alloc.insert(arm.clone(), h);
    }
    let mut assigned: usize = alloc.values().sum();
    for (arm, &n) in sizes {
        if assigned >= target {
            break;
        }
        let h = alloc[arm];
        let exact = fraction * n as f64;
        if (h as f64) < exact && n >= 2 && h + 1 < n {
            alloc.insert(arm.clone(), h + 1);
            assigned += 1;
        }
    }
    alloc
}

/// Stratified random holdout split. Each arm is shuffled by its own stream
/// derived from `(seed, arm id)`; output datasets keep the input order.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    if ds.is_empty() {
        return Err(Error::Config("cannot split an empty dataset".into()));
    }
    let mut by_arm: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records().iter().enumerate() {
        by_arm.entry(r.arm_assigned.clone()).or_default().push(i);
    }
    let sizes: BTreeMap<String, usize> = by_arm.iter().map(|(a, v)| (a.clone(), v.len())).collect();
    let alloc = holdout_allocation(&sizes, spec.holdout_fraction);

    let mut warnings = Vec::new();
    let mut in_holdout = vec![false; ds.len()];
    for (arm, mut idx) in by_arm {
        if idx.len() < 2 {
            warnings.push(format!(
                "arm `{arm}` has {} record(s); holdout side left empty",
                idx.len()
            ));
        }
        let mut rng = seeding::stream(spec.seed, &format!("split:{arm}"));
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(alloc[&arm]) {
            in_holdout[i] = true;
        }
    }

    let study = ds.study_arc().clone();
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (r, h) in ds.records().iter().zip(in_holdout) {
        if h {
            holdout.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok(Split {
        train: Dataset {
            study: study.clone(),
            records: train,
        },
        holdout: Dataset {
            study,
            records: holdout,
        },
        warnings,
    })
}
