//! Improvement targets and the per-arm adjustment.
//!
//! Assignment to an arm is random, so the learner should not pick up the
//! link between the arm a patient happened to receive and the improvement
//! they saw. Targets are therefore centered by subtracting the mean
//! training-set improvement of the arm.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, PatientRecord};

/// Improvement `q_baseline - q_final`; positive means the patient got better.
pub fn delta_q(q_baseline: f64, q_final: Option<f64>) -> Result<f64> {
    match q_final {
        Some(f) if f.is_finite() && q_baseline.is_finite() => Ok(q_baseline - f),
        Some(_) => Err(Error::Training("outcome scores must be finite".into())),
        None => Err(Error::Training("missing final score".into())),
    }
}

pub fn record_delta_q(r: &PatientRecord) -> Result<f64> {
    delta_q(r.q_baseline, r.q_final).map_err(|_| Error::MissingOutcome(r.id.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMean {
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentTable {
    pub means: BTreeMap<String, ArmMean>,
    /// Identifier of the training set the means came from.
    pub provenance: String,
}

impl AdjustmentTable {
    pub fn mean(&self, arm: &str) -> Result<f64> {
        self.means
            .get(arm)
            .map(|m| m.mean)
            .ok_or_else(|| Error::MissingAdjustment(arm.to_string()))
    }

    pub fn contains(&self, arm: &str) -> bool {
        self.means.contains_key(arm)
    }
}

/// Short fingerprint of a set of patient ids.
pub fn training_set_id(ds: &Dataset) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for id in ds.ids() {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(&h.finalize()[..8])
}

/// Per-arm mean improvement over the complete-case training records.
/// Arms without such records get no entry and a warning.
pub fn build_adjustment_table(train: &Dataset) -> (AdjustmentTable, Vec<String>) {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in train.records() {
        if let Some(dq) = r.improvement() {
            let e = sums.entry(r.arm_assigned.as_str()).or_insert((0.0, 0));
            e.0 += dq;
            e.1 += 1;
        }
    }
    let mut warnings = Vec::new();
    let mut means = BTreeMap::new();
    for arm in train.study().arms() {
        match sums.get(arm.id.as_str()) {
            Some(&(s, n)) => {
                means.insert(
                    arm.id.clone(),
                    ArmMean {
                        mean: s / n as f64,
                        count: n,
                    },
                );
            }
            None => warnings.push(format!("arm `{}` has no complete-case training records", arm.id)),
        }
    }
    (
        AdjustmentTable {
            means,
            provenance: training_set_id(train),
        },
        warnings,
    )
}

pub fn adjust(dq: f64, arm: &str, table: &AdjustmentTable) -> Result<f64> {
    Ok(dq - table.mean(arm)?)
}

pub fn unadjust(pred: f64, arm: &str, table: &AdjustmentTable) -> Result<f64> {
    Ok(pred + table.mean(arm)?)
}
