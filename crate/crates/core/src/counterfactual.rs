//! Counterfactual scores and outcome-matrix completion.
//!
//! For a patient `x` and an arm `T` they did not receive, the score is an
//! aggregate of the verified improvements of the `k` training patients in
//! `T` most similar to `x`. Similarity is `1 / (1 + d)` where `d` is the
//! mean squared standardized difference over co-observed numeric, ordinal
//! and binary features plus the mean mismatch rate over co-observed
//! categorical features.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Arm, Dataset, FeatureKind, PatientRecord};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `(1/k) * sum_u s(u, x) * dq(u)`
    PaperLiteral,
    /// `sum_u s(u, x) * dq(u) / sum_u s(u, x)`
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    pub k: usize,
    pub aggregation: Aggregation,
    pub kinds: Vec<FeatureKind>,
    pub standardization: Vec<Standardization>,
}

impl SimilarityConfig {
    /// Per-feature mean and sample sd over the observed training values.
    /// Constant or nearly unobserved features get sd = 1.
    pub fn fit(train: &Dataset, k: usize, aggregation: Aggregation) -> Result<Self> {
        if k < 1 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        let space = train.study().feature_space();
        let mut standardization = Vec::with_capacity(space.len());
        for j in 0..space.len() {
            let vals: Vec<f64> = train.records().iter().filter_map(|r| r.features[j]).collect();
            let n = vals.len() as f64;
            let mean = if vals.is_empty() {
                0.0
            } else {
                vals.iter().sum::<f64>() / n
            };
            let sd = if vals.len() < 2 {
                1.0
            } else {
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            };
            let sd = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
            standardization.push(Standardization { mean, sd });
        }
        Ok(SimilarityConfig {
            k,
            aggregation,
            kinds: space.features.iter().map(|f| f.kind).collect(),
            standardization,
        })
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }
}

/// Distance `d` and the number of co-observed features.
pub fn distance(x: &[Option<f64>], u: &[Option<f64>], cfg: &SimilarityConfig) -> (f64, usize) {
    let (mut sq, mut n_num, mut mis, mut n_cat) = (0.0, 0usize, 0.0, 0usize);
    for (j, (a, b)) in x.iter().zip(u).enumerate() {
        let (Some(a), Some(b)) = (a, b) else { continue };
        if cfg.kinds[j] == FeatureKind::Categorical {
            n_cat += 1;
            if a != b {
                mis += 1.0;
            }
        } else {
            let z = (a - b) / cfg.standardization[j].sd;
            sq += z * z;
            n_num += 1;
        }
    }
    let mut d = 0.0;
    if n_num > 0 {
        d += sq / n_num as f64;
    }
    if n_cat > 0 {
        d += mis / n_cat as f64;
    }
    (d, n_num + n_cat)
}

/// Similarity in `[0, 1]`; 0 when the two records share no observed feature.
pub fn similarity(x: &PatientRecord, u: &PatientRecord, cfg: &SimilarityConfig) -> f64 {
    match distance(&x.features, &u.features, cfg) {
        (_, 0) => 0.0,
        (d, _) => 1.0 / (1.0 + d),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub patient: String,
    pub similarity: f64,
    pub improvement: f64,
}

/// The `k` most similar candidates (clamped to the pool size), by
/// descending similarity then ascending patient id. `x` itself is skipped.
pub fn knn(
    x: &PatientRecord,
    arm: &str,
    candidates: &[&PatientRecord],
    k: usize,
    cfg: &SimilarityConfig,
) -> Result<Vec<Neighbor>> {
    let mut scored: Vec<Neighbor> = Vec::with_capacity(candidates.len());
    for u in candidates {
        if u.id == x.id {
            continue;
        }
        let improvement = u.improvement().ok_or_else(|| Error::MissingOutcome(u.id.clone()))?;
        scored.push(Neighbor {
            patient: u.id.clone(),
            similarity: similarity(x, u, cfg),
            improvement,
        });
    }
    if scored.is_empty() {
        return Err(Error::EmptyArm(arm.to_string()));
    }
    scored.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.patient.cmp(&b.patient))
    });
    scored.truncate(k.max(1));
    Ok(scored)
}

pub fn aggregate(neighbors: &[Neighbor], mode: Aggregation) -> f64 {
    let weighted: f64 = neighbors.iter().map(|n| n.similarity * n.improvement).sum();
    match mode {
        Aggregation::PaperLiteral => weighted / neighbors.len() as f64,
        Aggregation::Normalized => {
            let total: f64 = neighbors.iter().map(|n| n.similarity).sum();
            if total > 0.0 {
                weighted / total
            } else {
                // No neighbor shares an observed feature with x.
                neighbors.iter().map(|n| n.improvement).sum::<f64>() / neighbors.len() as f64
            }
        }
    }
}

/// Complete-case training patients grouped by assigned arm.
pub struct ArmPools<'a> {
    pools: BTreeMap<&'a str, Vec<&'a PatientRecord>>,
}

impl<'a> ArmPools<'a> {
    pub fn new(train: &'a Dataset) -> Self {
        let mut pools: BTreeMap<&str, Vec<&PatientRecord>> = BTreeMap::new();
        for r in train.records().iter().filter(|r| r.is_complete()) {
            pools.entry(r.arm_assigned.as_str()).or_default().push(r);
        }
        ArmPools { pools }
    }

    pub fn pool(&self, arm: &str) -> &[&'a PatientRecord] {
        self.pools.get(arm).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn neighbors(&self, x: &PatientRecord, arm: &Arm, cfg: &SimilarityConfig) -> Result<Vec<Neighbor>> {
        if x.arm_assigned == arm.id {
            return Err(Error::record(
                &x.id,
                format!("arm `{}` is the assigned arm; its outcome is verified", arm.id),
            ));
        }
        if !x.is_eligible(arm) {
            return Err(Error::Ineligible {
                patient: x.id.clone(),
                arm: arm.id.clone(),
            });
        }
        knn(x, &arm.id, self.pool(&arm.id), cfg.k, cfg)
    }

    pub fn score(&self, x: &PatientRecord, arm: &Arm, cfg: &SimilarityConfig) -> Result<f64> {
        Ok(aggregate(&self.neighbors(x, arm, cfg)?, cfg.aggregation))
    }
}

/// Counterfactual improvement of `x` under `arm`, from the training
/// patients who received it.
pub fn counterfactual_score(x: &PatientRecord, arm: &Arm, train: &Dataset, cfg: &SimilarityConfig) -> Result<f64> {
    ArmPools::new(train).score(x, arm, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Verified,
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeCell {
    pub value: f64,
    pub provenance: Provenance,
}

/// Patient-by-arm improvement matrix; `None` cells are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub cells: Vec<Vec<Option<OutcomeCell>>>,
}

impl OutcomeMatrix {
    pub fn cell(&self, patient: &str, arm: &str) -> Option<OutcomeCell> {
        let i = self.rows.iter().position(|r| r == patient)?;
        let j = self.columns.iter().position(|c| c == arm)?;
        self.cells[i][j]
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.cells
            .iter()
            .flatten()
            .flatten()
            .filter(|c| c.provenance == provenance)
            .count()
    }

    /// CSV export: `patient_id,arm,value,provenance`, non-empty cells only.
    pub fn write_csv<W: Write>(&self, comments: &[String], mut out: W) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patient_id", "arm", "value", "provenance"])?;
        for (p, row) in self.rows.iter().zip(&self.cells) {
            for (a, cell) in self.columns.iter().zip(row) {
                if let Some(c) = cell {
                    let prov = match c.provenance {
                        Provenance::Verified => "verified",
                        Provenance::Counterfactual => "counterfactual",
                    };
                    w.write_record([p.as_str(), a.as_str(), &format!("{}", c.value), prov])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CompletedMatrix {
    pub matrix: OutcomeMatrix,
    pub warnings: Vec<String>,
}

/// Fills every eligible cell: the assigned arm with the verified
/// improvement, the others with counterfactual scores. Arms without
/// training patients stay empty.
pub fn complete_matrix(train: &Dataset, cfg: &SimilarityConfig) -> Result<CompletedMatrix> {
    if let Some(r) = train.records().iter().find(|r| !r.is_complete()) {
        return Err(Error::MissingOutcome(r.id.clone()));
    }
    let pools = ArmPools::new(train);
    let arms = train.study().arms();
    let warnings: Vec<String> = arms
        .iter()
        .filter(|a| pools.pool(&a.id).is_empty())
        .map(|a| format!("arm `{}` has no training patients; its column stays empty", a.id))
        .collect();

    let fill_row = |x: &PatientRecord| -> Result<Vec<Option<OutcomeCell>>> {
        arms.iter()
            .map(|arm| {
                if arm.id == x.arm_assigned {
                    let value = x.improvement().ok_or_else(|| Error::MissingOutcome(x.id.clone()))?;
                    return Ok(Some(OutcomeCell {
                        value,
                        provenance: Provenance::Verified,
                    }));
                }
                if !x.is_eligible(arm) || pools.pool(&arm.id).is_empty() {
                    return Ok(None);
                }
                Ok(Some(OutcomeCell {
                    value: pools.score(x, arm, cfg)?,
                    provenance: Provenance::Counterfactual,
                }))
            })
            .collect()
    };

    #[cfg(feature = "parallel")]
    let cells: Vec<Result<Vec<Option<OutcomeCell>>>> = train.records().par_iter().map(fill_row).collect();
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<Result<Vec<Option<OutcomeCell>>>> = train.records().iter().map(fill_row).collect();

    Ok(CompletedMatrix {
        matrix: OutcomeMatrix {
            rows: train.ids(),
            columns: arms.iter().map(|a| a.id.clone()).collect(),
            cells: cells.into_iter().collect::<Result<_>>()?,
        },
        warnings,
    })
}
