//! Validation: RMSE tables, alignment of top-1 recommendations with the
//! assigned arm, group statistics, Welch tests and the overfit guard.

mod report;
pub mod welch;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adjust::record_delta_q;
use crate::counterfactual::{ArmPools, SimilarityConfig};
use crate::ensemble::Ranker;
use crate::error::{Error, Result};
use crate::model::{Dataset, PatientRecord};

pub use report::{
    build_report, plot_data, write_tables, ArmRmse, OverfitCheck, PlotRow, ReportHeader, TherapyRmse, ValidationReport,
    WelchEntry,
};
pub use welch::{welch_ttest, WelchResult};

/// Improvement above which a patient's change counts as clinically significant.
pub const SIGNIFICANCE_THRESHOLD: f64 = 7.0;

pub const OVERFIT_COMPLETE_RATE: f64 = 0.9;
pub const OVERFIT_GAP: f64 = 0.25;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RmseTable<K: Ord> {
    pub values: BTreeMap<K, f64>,
    pub counts: BTreeMap<K, usize>,
    pub warnings: Vec<String>,
}

#[derive(Default)]
struct Acc {
    sq: f64,
    n: usize,
}

impl Acc {
    fn push(&mut self, pred: f64, actual: f64) {
        self.sq += (pred - actual) * (pred - actual);
        self.n += 1;
    }

    fn rmse(&self) -> f64 {
        (self.sq / self.n as f64).sqrt()
    }
}

fn therapy_table(model: &dyn Ranker, accs: BTreeMap<String, Acc>, what: &str) -> RmseTable<String> {
    let mut t = RmseTable::default();
    for th in model.study().therapies() {
        match accs.get(&th.id) {
            Some(a) if a.n > 0 => {
                t.values.insert(th.id.clone(), a.rmse());
                t.counts.insert(th.id.clone(), a.n);
            }
            _ => t
                .warnings
                .push(format!("therapy `{}` has no {what} holdout pairs", th.id)),
        }
    }
    t
}

/// Per-therapy RMSE against verified outcomes: each holdout patient counts
/// for every therapy in the arm they were assigned.
pub fn rmse_per_therapy_verified(model: &dyn Ranker, holdout: &Dataset) -> Result<RmseTable<String>> {
    let study = model.study();
    let mut accs: BTreeMap<String, Acc> = BTreeMap::new();
    for x in holdout.records() {
        let arm = study.arm(&x.arm_assigned)?;
        if !model.arm_enabled(&arm.id) {
            continue;
        }
        let actual = record_delta_q(x)?;
        for c in &arm.components {
            let pred = model.component_prediction(x, arm, c)?;
            accs.entry(c.clone()).or_default().push(pred, actual);
        }
    }
    Ok(therapy_table(model, accs, "verified"))
}

/// Per-therapy RMSE over every eligible (patient, arm) pair, using the
/// verified outcome for the assigned arm and a counterfactual score from
/// the training set elsewhere.
pub fn rmse_per_therapy_counterfactual(
    model: &dyn Ranker,
    holdout: &Dataset,
    train: &Dataset,
    cfg: &SimilarityConfig,
) -> Result<RmseTable<String>> {
    let study = model.study();
    let pools = ArmPools::new(train);
    let mut accs: BTreeMap<String, Acc> = BTreeMap::new();
    let mut warnings = Vec::new();
    for arm in study.arms() {
        if model.arm_enabled(&arm.id) && pools.pool(&arm.id).is_empty() {
            warnings.push(format!(
                "arm `{}` has no training patients; no counterfactual references",
                arm.id
            ));
        }
    }
    for x in holdout.records() {
        for arm in study.arms() {
            if !x.is_eligible(arm) || !model.arm_enabled(&arm.id) {
                continue;
            }
            let reference = if x.arm_assigned == arm.id {
                record_delta_q(x)?
            } else if pools.pool(&arm.id).is_empty() {
                continue;
            } else {
                pools.score(x, arm, cfg)?
            };
            for c in &arm.components {
                let pred = model.component_prediction(x, arm, c)?;
                accs.entry(c.clone()).or_default().push(pred, reference);
            }
        }
    }
    let mut t = therapy_table(model, accs, "counterfactual");
    warnings.append(&mut t.warnings);
    t.warnings = warnings;
    Ok(t)
}

/// RMSE of each component model on the holdout patients assigned to each arm.
pub fn rmse_per_arm(model: &dyn Ranker, holdout: &Dataset) -> Result<RmseTable<(String, String)>> {
    let study = model.study();
    let mut accs: BTreeMap<(String, String), Acc> = BTreeMap::new();
    for x in holdout.records() {
        let arm = study.arm(&x.arm_assigned)?;
        if !model.arm_enabled(&arm.id) {
            continue;
        }
        let actual = record_delta_q(x)?;
        for c in &arm.components {
            let pred = model.component_prediction(x, arm, c)?;
            accs.entry((arm.id.clone(), c.clone())).or_default().push(pred, actual);
        }
    }
    let mut t = RmseTable::default();
    for arm in study.arms() {
        let mut any = false;
        for c in &arm.components {
            let key = (arm.id.clone(), c.clone());
            if let Some(a) = accs.get(&key) {
                t.values.insert(key.clone(), a.rmse());
                t.counts.insert(key, a.n);
                any = true;
            }
        }
        if !any {
            t.warnings.push(format!("arm `{}` has no holdout patients", arm.id));
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Binary,
    Ternary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentLabel {
    pub patient: String,
    pub binary: bool,
    pub ternary: u8,
    pub top1_arm: String,
    pub rct_arm: String,
}

impl AlignmentLabel {
    pub fn group(&self, by: GroupBy) -> String {
        match by {
            GroupBy::Binary => if self.binary { "TRUE" } else { "FALSE" }.to_string(),
            GroupBy::Ternary => self.ternary.to_string(),
        }
    }
}

pub fn group_names(by: GroupBy) -> &'static [&'static str] {
    match by {
        GroupBy::Binary => &["TRUE", "FALSE"],
        GroupBy::Ternary => &["2", "1", "0"],
    }
}

fn label_one(model: &dyn Ranker, x: &PatientRecord) -> Result<AlignmentLabel> {
    let study = model.study();
    let ranking = model.rank(x)?;
    let top = study.arm(&ranking.top().arm)?;
    let rct = study.arm(&x.arm_assigned)?;
    let ternary = if top.id == rct.id {
        2
    } else if top.overlap(rct) > 0 {
        1
    } else {
        0
    };
    Ok(AlignmentLabel {
        patient: x.id.clone(),
        binary: ternary == 2,
        ternary,
        top1_arm: top.id.clone(),
        rct_arm: rct.id.clone(),
    })
}

/// Compares each patient's top-ranked arm with the arm they were assigned.
pub fn align(model: &(dyn Ranker + Sync), cohort: &Dataset) -> Result<Vec<AlignmentLabel>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cohort.records().par_iter().map(|x| label_one(model, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cohort.records().iter().map(|x| label_one(model, x)).collect()
    }
}

pub fn alignment_rate(labels: &[AlignmentLabel]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|l| l.binary).count() as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub count: usize,
    pub mean_final: Option<f64>,
    pub mean_improvement: Option<f64>,
    /// Mean of per-patient `100 * improvement / baseline`. Patients with a
    /// zero baseline are left out of this mean only.
    pub mean_improvement_pct: Option<f64>,
    pub significant_rate: Option<f64>,
}

/// Per-group outcome values used by the statistics and the plot data.
pub(crate) struct GroupValues {
    pub finals: Vec<f64>,
    pub improvements: Vec<f64>,
    pub pcts: Vec<f64>,
}

pub(crate) fn group_values(
    labels: &[AlignmentLabel],
    cohort: &Dataset,
    by: GroupBy,
) -> Result<BTreeMap<String, GroupValues>> {
    let mut out: BTreeMap<String, GroupValues> = group_names(by)
        .iter()
        .map(|g| {
            (
                g.to_string(),
                GroupValues {
                    finals: vec![],
                    improvements: vec![],
                    pcts: vec![],
                },
            )
        })
        .collect();
    for l in labels {
        let x = cohort
            .get(&l.patient)
            .ok_or_else(|| Error::UnknownPatient(l.patient.clone()))?;
        let dq = record_delta_q(x)?;
        let g = out.get_mut(&l.group(by)).expect("known group");
        g.finals.push(x.q_final.expect("complete record"));
        g.improvements.push(dq);
        if x.q_baseline != 0.0 {
            g.pcts.push(100.0 * dq / x.q_baseline);
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn group_stats(
    labels: &[AlignmentLabel],
    cohort: &Dataset,
    by: GroupBy,
    threshold: f64,
) -> Result<BTreeMap<String, GroupStats>> {
    if labels.len() != cohort.len() {
        return Err(Error::Invariant(format!(
            "{} labels for a cohort of {}",
            labels.len(),
            cohort.len()
        )));
    }
    Ok(group_values(labels, cohort, by)?
        .into_iter()
        .map(|(g, v)| {
            let n = v.improvements.len();
            let sig = v.improvements.iter().filter(|&&d| d > threshold).count();
            let stats = GroupStats {
                count: n,
                mean_final: mean(&v.finals),
                mean_improvement: mean(&v.improvements),
                mean_improvement_pct: mean(&v.pcts),
                significant_rate: (n > 0).then(|| sig as f64 / n as f64),
            };
            (g, stats)
        })
        .collect())
}

pub fn overfit_flag(rate_heldout: f64, rate_complete: f64) -> bool {
    rate_complete >= OVERFIT_COMPLETE_RATE || rate_complete - rate_heldout > OVERFIT_GAP
}

/// Binary alignment rates on the training, complete and holdout cohorts.
pub fn overfit_check(
    model: &(dyn Ranker + Sync),
    train: &Dataset,
    complete: &Dataset,
    holdout: &Dataset,
) -> Result<OverfitCheck> {
    let rate_train = alignment_rate(&align(model, train)?);
    let rate_complete = alignment_rate(&align(model, complete)?);
    let rate_heldout = alignment_rate(&align(model, holdout)?);
    Ok(OverfitCheck {
        rate_train,
        rate_heldout,
        rate_complete,
        flag: overfit_flag(rate_heldout, rate_complete),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overfit_rule() {
        assert!(!overfit_flag(0.244, 0.277));
        assert!(overfit_flag(0.3, 0.95));
        assert!(overfit_flag(0.3, 0.9));
        assert!(overfit_flag(0.2, 0.46));
        assert!(!overfit_flag(0.4, 0.4));
    }

    #[test]
    fn rmse_accumulator() {
        let mut a = Acc::default();
        a.push(20.0, 10.0);
        a.push(20.0, 30.0);
        assert_eq!(a.rmse(), 10.0);
    }
}
