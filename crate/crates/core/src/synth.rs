//! Seeded synthetic multi-arm RCT cohorts with known individual effects.
//!
//! Each patient draws baseline features, eligibility flags and an arm
//! (uniformly among the arms they are eligible for). The true improvement
//! under an arm is the mean over its components of
//! `base(c) + sum_f coef(f, c) * z_f`, where `z_f` is the standardized
//! feature value and missing features contribute zero. The realized final
//! score is `q_baseline - (true effect + noise)`; dropouts have none.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureKind, PatientRecord, StudyConfig};
use crate::seeding;

pub const ORDINAL_LEVELS: u32 = 5;
pub const CATEGORICAL_LEVELS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub feature: String,
    pub therapy: String,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EffectModel {
    /// Base improvement per therapy; absent therapies default to 0.
    pub base: BTreeMap<String, f64>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericScale {
    pub mean: f64,
    pub sd: f64,
}

fn default_baseline_mean() -> f64 {
    50.0
}

fn default_baseline_sd() -> f64 {
    15.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_patients: usize,
    pub study: StudyConfig,
    pub effect_model: EffectModel,
    pub noise_sd: f64,
    #[serde(default)]
    pub feature_missing_rate: f64,
    #[serde(default)]
    pub block_missing_rate: f64,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub eligibility_rate: f64,
    /// Location and scale of numeric features (default N(0, 1)).
    #[serde(default)]
    pub feature_scales: BTreeMap<String, NumericScale>,
    #[serde(default = "default_baseline_mean")]
    pub baseline_mean: f64,
    #[serde(default = "default_baseline_sd")]
    pub baseline_sd: f64,
}

impl GeneratorConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_patients < 1 {
            return bad("n_patients must be at least 1".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd {} must be finite and >= 0", self.noise_sd));
        }
        for (name, r) in [
            ("feature_missing_rate", self.feature_missing_rate),
            ("block_missing_rate", self.block_missing_rate),
            ("dropout_rate", self.dropout_rate),
            ("eligibility_rate", self.eligibility_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} = {r} is outside [0, 1]"));
            }
        }
        if !(self.baseline_sd >= 0.0 && self.baseline_mean.is_finite()) {
            return bad("baseline distribution is invalid".into());
        }
        for t in self.effect_model.base.keys() {
            if !self.study.has_therapy(t) {
                return Err(Error::UnknownTherapy(t.clone()));
            }
        }
        let space = self.study.feature_space();
        for i in &self.effect_model.interactions {
            if !self.study.has_therapy(&i.therapy) {
                return Err(Error::UnknownTherapy(i.therapy.clone()));
            }
            if space.index_of(&i.feature).is_none() {
                return Err(Error::UnknownFeature(i.feature.clone()));
            }
        }
        for (name, s) in &self.feature_scales {
            if space.index_of(name).is_none() {
                return Err(Error::UnknownFeature(name.clone()));
            }
            if !(s.sd > 0.0) {
                return bad(format!("feature `{name}` needs sd > 0"));
            }
        }
        Ok(())
    }
}

/// True expected improvement per (patient, eligible arm) and the realized
/// noise draw per patient.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub effects: BTreeMap<String, BTreeMap<String, f64>>,
    pub noise: BTreeMap<String, f64>,
}

impl GroundTruth {
    pub fn effect(&self, patient: &str, arm: &str) -> Option<f64> {
        self.effects.get(patient)?.get(arm).copied()
    }

    pub fn write_csv<W: Write>(&self, comments: &[String], mut out: W) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patient_id", "arm", "true_effect"])?;
        for (p, arms) in &self.effects {
            for (a, v) in arms {
                w.write_record([p.as_str(), a.as_str(), &format!("{v}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let mut gt = GroundTruth::default();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let v: f64 = rec.get(2).unwrap_or("").parse().map_err(|_| Error::Cell {
                row: i as u64 + 1,
                column: "true_effect".into(),
                message: "not a number".into(),
            })?;
            gt.effects
                .entry(rec.get(0).unwrap_or("").to_string())
                .or_default()
                .insert(rec.get(1).unwrap_or("").to_string(), v);
        }
        Ok(gt)
    }
}

/// Standardized value of a generated feature, using the analytic moments
/// of the distribution it was drawn from.
fn standardize(kind: FeatureKind, value: f64, scale: NumericScale) -> f64 {
    match kind {
        FeatureKind::Numeric => (value - scale.mean) / scale.sd,
        FeatureKind::Ordinal => {
            let l = f64::from(ORDINAL_LEVELS);
            (value - (l - 1.0) / 2.0) / ((l * l - 1.0) / 12.0).sqrt()
        }
        FeatureKind::Categorical => {
            let l = f64::from(CATEGORICAL_LEVELS);
            (value - (l - 1.0) / 2.0) / ((l * l - 1.0) / 12.0).sqrt()
        }
        FeatureKind::Binary => (value - 0.5) / 0.5,
    }
}

/// Generates a cohort and its ground truth. Identical configs give
/// bit-identical outputs.
pub fn generate(cfg: &GeneratorConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let study = Arc::new(cfg.study.clone());
    let space = study.feature_space();
    let blocks = space.blocks();
    let block_of: Vec<usize> = space
        .features
        .iter()
        .map(|f| blocks.iter().position(|b| *b == f.block).expect("block listed"))
        .collect();
    let scales: Vec<NumericScale> = space
        .features
        .iter()
        .map(|f| {
            cfg.feature_scales
                .get(&f.name)
                .copied()
                .unwrap_or(NumericScale { mean: 0.0, sd: 1.0 })
        })
        .collect();
    // coef[therapy][feature]
    let mut coefs: BTreeMap<&str, Vec<f64>> = study
        .therapies()
        .iter()
        .map(|t| (t.id.as_str(), vec![0.0; space.len()]))
        .collect();
    for i in &cfg.effect_model.interactions {
        let f = space.index_of(&i.feature).expect("validated");
        coefs.get_mut(i.therapy.as_str()).expect("validated")[f] += i.coef;
    }

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let width = cfg.n_patients.to_string().len().max(4);
    let mut records = Vec::with_capacity(cfg.n_patients);
    let mut truth = GroundTruth::default();

    for p in 0..cfg.n_patients {
        let id = format!("P{:0width$}", p + 1);
        let mut rng = seeding::stream(cfg.seed, &format!("patient:{p}"));

        let mut values = Vec::with_capacity(space.len());
        for (f, scale) in space.features.iter().zip(&scales) {
            let v = match f.kind {
                FeatureKind::Numeric => scale.mean + scale.sd * std_normal.sample(&mut rng),
                FeatureKind::Ordinal => f64::from(rng.random_range(0..ORDINAL_LEVELS)),
                FeatureKind::Categorical => f64::from(rng.random_range(0..CATEGORICAL_LEVELS)),
                FeatureKind::Binary => f64::from(u8::from(rng.random_bool(0.5))),
            };
            values.push(v);
        }

        let eligibility: BTreeMap<String, bool> = space
            .eligibility_flags
            .iter()
            .map(|flag| (flag.clone(), rng.random_bool(cfg.eligibility_rate)))
            .collect();
        let record_flag = |flag: &str| eligibility.get(flag).copied().unwrap_or(false);
        let eligible: Vec<usize> = study
            .arms()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.requires_eligibility.as_deref().is_none_or(record_flag))
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::Config(format!("patient {id} is eligible for no arm")));
        }
        let assigned = eligible[rng.random_range(0..eligible.len())];

        let q_baseline = (cfg.baseline_mean + cfg.baseline_sd * std_normal.sample(&mut rng)).clamp(0.0, 100.0);
        let noise = cfg.noise_sd * std_normal.sample(&mut rng);
        let dropout = rng.random_bool(cfg.dropout_rate);

        let block_missing: Vec<bool> = blocks.iter().map(|_| rng.random_bool(cfg.block_missing_rate)).collect();
        let features: Vec<Option<f64>> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cell_missing = rng.random_bool(cfg.feature_missing_rate);
                (!cell_missing && !block_missing[block_of[i]]).then_some(v)
            })
            .collect();

        let z: Vec<f64> = features
            .iter()
            .zip(&space.features)
            .zip(&scales)
            .map(|((v, f), s)| v.map_or(0.0, |v| standardize(f.kind, v, *s)))
            .collect();
        let mut effects = BTreeMap::new();
        for &ai in &eligible {
            let arm = &study.arms()[ai];
            let total: f64 = arm
                .components
                .iter()
                .map(|c| {
                    let base = cfg.effect_model.base.get(c).copied().unwrap_or(0.0);
                    base + coefs[c.as_str()].iter().zip(&z).map(|(k, z)| k * z).sum::<f64>()
                })
                .sum();
            effects.insert(arm.id.clone(), total / arm.components.len() as f64);
        }

        let arm_id = study.arms()[assigned].id.clone();
        let realized = effects[&arm_id] + noise;
        records.push(PatientRecord {
            id: id.clone(),
            features,
            eligibility,
            arm_assigned: arm_id,
            q_baseline,
            q_final: (!dropout).then_some(q_baseline - realized),
        });
        truth.effects.insert(id.clone(), effects);
        truth.noise.insert(id, noise);
    }

    Ok((Dataset::new(study, records)?, truth))
}

/// Eligible arm with the largest true effect; ties go to the
/// lexicographically smallest arm id.
pub fn true_best_arm(gt: &GroundTruth, patient: &PatientRecord) -> Result<String> {
    let effects = gt
        .effects
        .get(&patient.id)
        .ok_or_else(|| Error::UnknownPatient(patient.id.clone()))?;
    let mut best: Option<(&String, f64)> = None;
    for (arm, &v) in effects {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((arm, v));
        }
    }
    best.map(|(a, _)| a.clone())
        .ok_or_else(|| Error::NoEligibleArm(patient.id.clone()))
}
