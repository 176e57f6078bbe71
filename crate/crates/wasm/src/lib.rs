//! Browser bindings: simulate and train a small cohort, rank a patient,
//! and inspect the nearest neighbours behind a counterfactual score.
//!
//! Every exported method returns a JSON string; `www/index.html` renders it.

use serde::Serialize;
use treatrank_core::counterfactual::{aggregate, knn, ArmPools, Neighbor};
use treatrank_core::gbtree::GbtParams;
use treatrank_core::model::{complete_case_filter, read_patients, stratified_split, write_dataset, SplitSpec};
use treatrank_core::presets::uniti_generator;
use treatrank_core::synth::generate;
use treatrank_core::validate::{build_report, GroupStats, ReportHeader, SIGNIFICANCE_THRESHOLD};
use treatrank_core::{Dataset, EnsembleModel, EnsembleSettings, Result};
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct TherapySummary<'a> {
    therapy: &'a str,
    cv_mae: f64,
    confidence: f64,
}

#[derive(Serialize)]
struct Summary<'a> {
    n_patients: usize,
    n_train: usize,
    n_holdout: usize,
    therapies: Vec<TherapySummary<'a>>,
    aligned: Option<&'a GroupStats>,
    not_aligned: Option<&'a GroupStats>,
    improvement_p: Option<f64>,
    overfit_flag: bool,
    rate_heldout: f64,
}

#[derive(Serialize)]
struct Explorer {
    patient: String,
    arm: String,
    assigned: String,
    /// Observed improvement when `arm` is the patient's own arm.
    verified: Option<f64>,
    estimate: f64,
    neighbors: Vec<Neighbor>,
}

/// A simulated trial with a trained ensemble.
#[wasm_bindgen]
pub struct Demo {
    train: Dataset,
    holdout: Dataset,
    model: EnsembleModel,
    summary: String,
}

fn js(e: treatrank_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

impl Demo {
    pub fn build(seed: u64, n_patients: usize, heterogeneity: f64, n_trees: usize) -> Result<Demo> {
        let (ds, _) = generate(&uniti_generator(seed, n_patients, heterogeneity))?;
        let complete = complete_case_filter(&ds);
        let split = stratified_split(&complete, &SplitSpec::new(0.25, seed)?)?;
        let settings = EnsembleSettings {
            grid: vec![GbtParams {
                n_trees,
                ..GbtParams::default()
            }],
            n_folds: 3,
            seed,
            ..EnsembleSettings::default()
        };
        let model = treatrank_core::ensemble::fit_ensemble(&split.train, &settings)?.model;
        let header = ReportHeader {
            tool: "treatrank-wasm".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            study_hash: model.study_hash.clone(),
            config_hash: String::new(),
            seed,
        };
        let report = build_report(
            &model,
            &split.train,
            &split.holdout,
            &model.similarity,
            SIGNIFICANCE_THRESHOLD,
            header,
        )?;
        let summary = Summary {
            n_patients: ds.len(),
            n_train: split.train.len(),
            n_holdout: split.holdout.len(),
            therapies: model
                .therapy_models
                .iter()
                .map(|m| TherapySummary {
                    therapy: &m.therapy,
                    cv_mae: m.cv_mean_mae,
                    confidence: m.confidence,
                })
                .collect(),
            aligned: report.binary_table.get("TRUE"),
            not_aligned: report.binary_table.get("FALSE"),
            improvement_p: report
                .welch
                .iter()
                .find(|w| w.metric == "improvement")
                .and_then(|w| w.result.as_ref())
                .map(|r| r.p_two_sided),
            overfit_flag: report.overfit.flag,
            rate_heldout: report.overfit.rate_heldout,
        };
        let summary = serde_json::to_string(&summary)?;
        Ok(Demo {
            train: split.train,
            holdout: split.holdout,
            model,
            summary,
        })
    }

    /// CSV header plus the row of the `index`-th holdout patient.
    pub fn holdout_csv(&self, index: usize) -> Result<String> {
        let r = &self.holdout.records()[index % self.holdout.len()];
        let one = Dataset::new(self.holdout.study_arc().clone(), vec![r.clone()])?;
        let mut buf = Vec::new();
        write_dataset(&one, &[], &mut buf)?;
        Ok(String::from_utf8_lossy(&buf).into_owned())
    }

    pub fn rank_csv(&self, csv: &str) -> Result<String> {
        let records = read_patients(csv.as_bytes(), &self.model.study)?;
        let rankings = records
            .iter()
            .map(|x| self.model.rank_treatments(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(serde_json::to_string(&rankings)?)
    }

    pub fn explore(&self, index: usize, arm: &str) -> Result<String> {
        let x = &self.holdout.records()[index % self.holdout.len()];
        let arm = self.model.study.arm(arm)?;
        let pools = ArmPools::new(&self.train);
        let cfg = &self.model.similarity;
        let neighbors = knn(x, &arm.id, pools.pool(&arm.id), cfg.k, cfg)?;
        Ok(serde_json::to_string(&Explorer {
            patient: x.id.clone(),
            arm: arm.id.clone(),
            assigned: x.arm_assigned.clone(),
            verified: (x.arm_assigned == arm.id).then(|| x.improvement()).flatten(),
            estimate: aggregate(&neighbors, cfg.aggregation),
            neighbors,
        })?)
    }
}

#[wasm_bindgen]
impl Demo {
    /// Simulates `n_patients`, splits 75/25 and trains one small model per therapy.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_patients: usize, heterogeneity: f64, n_trees: usize) -> std::result::Result<Demo, JsError> {
        Demo::build(seed, n_patients, heterogeneity, n_trees).map_err(js)
    }

    /// Training sizes, per-therapy CV error, and holdout alignment statistics.
    pub fn summary(&self) -> String {
        self.summary.clone()
    }

    pub fn arms(&self) -> String {
        let ids: Vec<&str> = self.model.study.arms().iter().map(|a| a.id.as_str()).collect();
        serde_json::to_string(&ids).unwrap_or_default()
    }

    #[wasm_bindgen(js_name = holdoutCount)]
    pub fn holdout_count(&self) -> usize {
        self.holdout.len()
    }

    #[wasm_bindgen(js_name = holdoutPatient)]
    pub fn holdout_patient(&self, index: usize) -> std::result::Result<String, JsError> {
        self.holdout_csv(index).map_err(js)
    }

    /// Ranks every row of a patient CSV (same columns as the dataset file).
    pub fn rank(&self, csv: &str) -> std::result::Result<String, JsError> {
        self.rank_csv(csv).map_err(js)
    }

    /// The training neighbours that score holdout patient `index` under `arm`.
    pub fn neighbors(&self, index: usize, arm: &str) -> std::result::Result<String, JsError> {
        self.explore(index, arm).map_err(js)
    }
}
