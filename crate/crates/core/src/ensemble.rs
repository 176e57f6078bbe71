//! Therapy-level models combined by restricted weighted voting.
//!
//! One model per therapy is trained on the pooled (patient, arm) cells of
//! every arm that contains the therapy. An arm's prediction may only use
//! the models of its own components; each vote is weighted by the model's
//! confidence, the inverse of its cross-validated mean absolute error.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::adjust::{build_adjustment_table, AdjustmentTable};
use crate::counterfactual::{complete_matrix, Aggregation, OutcomeMatrix, SimilarityConfig};
use crate::error::{Error, Result};
use crate::gbtree::{self, GbtModel, GbtParams, Matrix};
use crate::model::{Arm, Dataset, PatientRecord, StudyConfig};
use crate::seeding::derive_seed;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const CONFIDENCE_EPS: f64 = 1e-6;

/// Name of the companion-indicator feature for `therapy`.
pub fn companion_feature(therapy: &str) -> String {
    format!("with_{therapy}")
}

/// Feature list of `therapy`'s model: the baseline features followed by one
/// indicator per other therapy.
pub fn view_feature_names(study: &StudyConfig, therapy: &str) -> Vec<String> {
    let mut names = study.feature_space().names();
    names.extend(
        study
            .therapies()
            .iter()
            .filter(|t| t.id != therapy)
            .map(|t| companion_feature(&t.id)),
    );
    names
}

/// Model input for `x` under `arm` as seen by `therapy`'s model.
pub fn view_row(study: &StudyConfig, x: &PatientRecord, arm: &Arm, therapy: &str) -> Vec<Option<f64>> {
    let companion = arm.companion_of(therapy);
    let mut row = x.features.clone();
    row.extend(
        study
            .therapies()
            .iter()
            .filter(|t| t.id != therapy)
            .map(|t| Some(if companion == Some(t.id.as_str()) { 1.0 } else { 0.0 })),
    );
    row
}

#[derive(Debug, Clone)]
pub struct TrainingView {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    /// (patient id, arm id) of every instance.
    pub instances: Vec<(String, String)>,
}

/// One instance per non-empty cell whose arm contains `therapy`, with the
/// arm-adjusted cell value as target.
pub fn build_training_view(
    matrix: &OutcomeMatrix,
    train: &Dataset,
    therapy: &str,
    table: &AdjustmentTable,
) -> Result<TrainingView> {
    let study = train.study();
    let arms: Vec<(usize, &Arm)> = matrix
        .columns
        .iter()
        .enumerate()
        .map(|(j, id)| study.arm(id).map(|a| (j, a)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, a)| a.contains(therapy))
        .collect();
    if arms.is_empty() {
        return Err(Error::UnknownTherapy(therapy.to_string()));
    }
    let mut view = TrainingView {
        x: Vec::new(),
        y: Vec::new(),
        feature_names: view_feature_names(study, therapy),
        instances: Vec::new(),
    };
    for (i, pid) in matrix.rows.iter().enumerate() {
        let x = train.get(pid).ok_or_else(|| Error::UnknownPatient(pid.clone()))?;
        for &(j, arm) in &arms {
            if let Some(cell) = matrix.cells[i][j] {
                view.x.push(view_row(study, x, arm, therapy));
                view.y.push(cell.value - table.mean(&arm.id)?);
                view.instances.push((pid.clone(), arm.id.clone()));
            }
        }
    }
    Ok(view)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapyModel {
    pub therapy: String,
    pub model: GbtModel,
    pub confidence: f64,
    pub cv_mean_mae: f64,
    pub cv_mean_rmse: f64,
    pub grid_index: usize,
    /// Training instances per arm.
    pub training_summary: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub study: StudyConfig,
    pub study_hash: String,
    pub adjustment: AdjustmentTable,
    pub similarity: SimilarityConfig,
    pub therapy_models: Vec<TherapyModel>,
    pub disabled_arms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contributor {
    pub therapy: String,
    /// Therapy model output on the adjusted scale.
    pub adjusted_prediction: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPrediction {
    pub arm: String,
    pub predicted_improvement: f64,
    pub confidence: f64,
    pub contributors: Vec<Contributor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRanking {
    pub patient: String,
    pub predictions: Vec<TreatmentPrediction>,
}

impl TreatmentRanking {
    pub fn top(&self) -> &TreatmentPrediction {
        &self.predictions[0]
    }

    /// Sorts by predicted improvement (desc), confidence (desc), arm id (asc).
    pub fn sort(&mut self) {
        self.predictions.sort_by(|a, b| {
            b.predicted_improvement
                .total_cmp(&a.predicted_improvement)
                .then_with(|| b.confidence.total_cmp(&a.confidence))
                .then_with(|| a.arm.cmp(&b.arm))
        });
    }
}

/// Anything that can rank arms for a patient; lets validation run against
/// injected predictors as well as trained ensembles.
pub trait Ranker {
    fn study(&self) -> &StudyConfig;

    fn rank(&self, x: &PatientRecord) -> Result<TreatmentRanking>;

    /// Unadjusted improvement predicted by `therapy`'s model for `x` under `arm`.
    fn component_prediction(&self, x: &PatientRecord, arm: &Arm, therapy: &str) -> Result<f64>;

    fn arm_enabled(&self, _arm: &str) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSettings {
    pub k: usize,
    pub aggregation: Aggregation,
    pub grid: Vec<GbtParams>,
    pub n_folds: usize,
    pub seed: u64,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings {
            k: crate::counterfactual::DEFAULT_K,
            aggregation: Aggregation::Normalized,
            grid: gbtree::default_grid(),
            n_folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: EnsembleModel,
    pub matrix: OutcomeMatrix,
    pub warnings: Vec<String>,
}

fn fit_therapy(
    view: &TrainingView,
    therapy: &str,
    settings: &EnsembleSettings,
) -> Result<(TherapyModel, Option<String>)> {
    let stream_seed = derive_seed(settings.seed, &format!("therapy:{therapy}"));
    let grid: Vec<GbtParams> = settings
        .grid
        .iter()
        .map(|p| GbtParams {
            seed: stream_seed,
            ..p.clone()
        })
        .collect();
    let mut summary = BTreeMap::new();
    for (_, arm) in &view.instances {
        *summary.entry(arm.clone()).or_insert(0) += 1;
    }

    let (params, grid_index, mae, rmse, warning) = if view.x.len() >= settings.n_folds {
        let cv_seed = derive_seed(settings.seed, &format!("cv:{therapy}"));
        let tuned = gbtree::tune(&view.x, &view.y, &view.feature_names, &grid, settings.n_folds, cv_seed)?;
        let cv = tuned.best_cv().clone();
        (tuned.params, tuned.best_index, cv.mean_mae, cv.mean_rmse, None)
    } else {
        // Too few instances to cross-validate: first grid entry, training error.
        let m = gbtree::fit(&view.x, &view.y, &view.feature_names, &grid[0])?;
        let pred = m.predict_all(&view.x)?;
        let warning = format!(
            "therapy `{therapy}` has {} instances (< {} folds); untuned, confidence from training error",
            view.x.len(),
            settings.n_folds
        );
        (
            grid[0].clone(),
            0,
            gbtree::mae(&pred, &view.y),
            gbtree::rmse(&pred, &view.y),
            Some(warning),
        )
    };
    let model = gbtree::fit(&view.x, &view.y, &view.feature_names, &params)?;
    Ok((
        TherapyModel {
            therapy: therapy.to_string(),
            model,
            confidence: 1.0 / (CONFIDENCE_EPS + mae),
            cv_mean_mae: mae,
            cv_mean_rmse: rmse,
            grid_index,
            training_summary: summary,
        },
        warning,
    ))
}

/// Adjustment table, matrix completion, then one tuned model per therapy.
pub fn fit_ensemble(train: &Dataset, settings: &EnsembleSettings) -> Result<FitOutcome> {
    if settings.grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    if settings.n_folds < 2 {
        return Err(Error::Config("n_folds must be >= 2".into()));
    }
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let study = train.study();
    let (adjustment, mut warnings) = build_adjustment_table(train);
    let similarity = SimilarityConfig::fit(train, settings.k, settings.aggregation)?;
    let completed = complete_matrix(train, &similarity)?;
    warnings.extend(completed.warnings.iter().cloned());
    let matrix = completed.matrix;

    let disabled_arms: Vec<String> = study
        .arms()
        .iter()
        .filter(|a| !adjustment.contains(&a.id))
        .map(|a| a.id.clone())
        .collect();
    for a in &disabled_arms {
        warnings.push(format!("arm `{a}` disabled: no training data"));
    }

    let mut views = Vec::new();
    for t in study.therapies() {
        if !study.arms().iter().any(|a| a.contains(&t.id)) {
            warnings.push(format!("therapy `{}` appears in no arm; no model", t.id));
            continue;
        }
        let view = build_training_view(&matrix, train, &t.id, &adjustment)?;
        if view.x.is_empty() {
            warnings.push(format!("therapy `{}` has no training instances; no model", t.id));
            continue;
        }
        views.push((t.id.clone(), view));
    }

    let fit_one = |(t, v): &(String, TrainingView)| fit_therapy(v, t, settings);
    #[cfg(feature = "parallel")]
    let fitted: Vec<Result<(TherapyModel, Option<String>)>> = views.par_iter().map(fit_one).collect();
    #[cfg(not(feature = "parallel"))]
    let fitted: Vec<Result<(TherapyModel, Option<String>)>> = views.iter().map(fit_one).collect();

    let mut therapy_models = Vec::new();
    for r in fitted {
        let (m, w) = r?;
        warnings.extend(w);
        therapy_models.push(m);
    }

    Ok(FitOutcome {
        model: EnsembleModel {
            study_hash: study.hash(),
            study: study.clone(),
            adjustment,
            similarity,
            therapy_models,
            disabled_arms,
        },
        matrix,
        warnings,
    })
}

impl EnsembleModel {
    pub fn therapy_model(&self, therapy: &str) -> Result<&TherapyModel> {
        self.therapy_models
            .iter()
            .find(|m| m.therapy == therapy)
            .ok_or_else(|| Error::UnknownTherapy(therapy.to_string()))
    }

    pub fn is_enabled(&self, arm: &str) -> bool {
        !self.disabled_arms.iter().any(|a| a == arm)
    }

    /// Adjusted-scale output of `therapy`'s model for `x` under `arm`.
    pub fn adjusted_component(&self, x: &PatientRecord, arm: &Arm, therapy: &str) -> Result<f64> {
        let tm = self.therapy_model(therapy)?;
        tm.model.predict_row(&view_row(&self.study, x, arm, therapy))
    }

    pub fn predict_treatment(&self, x: &PatientRecord, arm_id: &str) -> Result<TreatmentPrediction> {
        let arm = self.study.arm(arm_id)?;
        if !x.is_eligible(arm) {
            return Err(Error::Ineligible {
                patient: x.id.clone(),
                arm: arm.id.clone(),
            });
        }
        if !self.is_enabled(&arm.id) {
            return Err(Error::DisabledArm(arm.id.clone()));
        }
        let mut contributors = Vec::with_capacity(arm.components.len());
        for c in &arm.components {
            let tm = self.therapy_model(c)?;
            contributors.push(Contributor {
                therapy: c.clone(),
                adjusted_prediction: tm.model.predict_row(&view_row(&self.study, x, arm, c))?,
                weight: tm.confidence,
            });
        }
        let combined = weighted_vote(&contributors);
        let confidence = contributors.iter().map(|c| c.weight).sum::<f64>() / contributors.len() as f64;
        Ok(TreatmentPrediction {
            arm: arm.id.clone(),
            predicted_improvement: combined + self.adjustment.mean(&arm.id)?,
            confidence,
            contributors,
        })
    }

    pub fn rank_treatments(&self, x: &PatientRecord) -> Result<TreatmentRanking> {
        let mut ranking = TreatmentRanking {
            patient: x.id.clone(),
            predictions: Vec::new(),
        };
        for arm in self.study.arms() {
            if x.is_eligible(arm) && self.is_enabled(&arm.id) {
                ranking.predictions.push(self.predict_treatment(x, &arm.id)?);
            }
        }
        if ranking.predictions.is_empty() {
            return Err(Error::NoEligibleArm(x.id.clone()));
        }
        ranking.sort();
        Ok(ranking)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EnsembleModel = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    /// Consistency checks run on load: study hash, adjustments and models
    /// for every enabled arm, valid confidences.
    pub fn check(&self) -> Result<()> {
        if self.study.hash() != self.study_hash {
            return Err(Error::Mismatch("model study hash does not match its study".into()));
        }
        for arm in self.study.arms() {
            if !self.is_enabled(&arm.id) {
                continue;
            }
            self.adjustment.mean(&arm.id)?;
            for c in &arm.components {
                self.therapy_model(c)?;
            }
        }
        for m in &self.therapy_models {
            if !(m.confidence > 0.0 && m.confidence.is_finite()) {
                return Err(Error::Invariant(format!(
                    "therapy `{}` has invalid confidence",
                    m.therapy
                )));
            }
        }
        Ok(())
    }
}

/// Confidence-weighted mean of the contributors' adjusted predictions.
pub fn weighted_vote(contributors: &[Contributor]) -> f64 {
    if let [only] = contributors {
        return only.adjusted_prediction;
    }
    let w: f64 = contributors.iter().map(|c| c.weight).sum();
    contributors
        .iter()
        .map(|c| c.weight * c.adjusted_prediction)
        .sum::<f64>()
        / w
}

impl Ranker for EnsembleModel {
    fn study(&self) -> &StudyConfig {
        &self.study
    }

    fn rank(&self, x: &PatientRecord) -> Result<TreatmentRanking> {
        self.rank_treatments(x)
    }

    fn component_prediction(&self, x: &PatientRecord, arm: &Arm, therapy: &str) -> Result<f64> {
        Ok(self.adjusted_component(x, arm, therapy)? + self.adjustment.mean(&arm.id)?)
    }

    fn arm_enabled(&self, arm: &str) -> bool {
        self.is_enabled(arm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(t: &str, p: f64, w: f64) -> Contributor {
        Contributor {
            therapy: t.into(),
            adjusted_prediction: p,
            weight: w,
        }
    }

    #[test]
    fn voting_weights() {
        assert_eq!(weighted_vote(&[c("A", 3.3, 7.0)]), 3.3);
        assert_eq!(weighted_vote(&[c("A", 3.0, 1.5), c("B", 9.0, 1.5)]), 6.0);
        assert_eq!(weighted_vote(&[c("A", 3.0, 2.0), c("B", 9.0, 1.0)]), 5.0);
    }

    #[test]
    fn ranking_tie_rule() {
        let p = |arm: &str, v, conf| TreatmentPrediction {
            arm: arm.into(),
            predicted_improvement: v,
            confidence: conf,
            contributors: vec![],
        };
        let mut r = TreatmentRanking {
            patient: "x".into(),
            predictions: vec![p("B", 5.0, 1.0), p("A", 5.0, 1.0), p("C", 5.0, 2.0), p("D", 9.0, 0.1)],
        };
        r.sort();
        let order: Vec<&str> = r.predictions.iter().map(|p| p.arm.as_str()).collect();
        assert_eq!(order, ["D", "C", "A", "B"]);
    }
}
