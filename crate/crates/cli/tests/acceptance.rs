//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines show up in plain `cargo test` output; the
//! process exits non-zero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::oracles::{exhaustive_root_split, split_instance, Best, SimilarityOracle};
use common::six_arm_generator;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use treatrank_core::adjust::{adjust, build_adjustment_table};
use treatrank_core::counterfactual::{complete_matrix, Aggregation, Provenance, SimilarityConfig};
use treatrank_core::ensemble::{
    fit_ensemble, EnsembleModel, EnsembleSettings, Ranker, TreatmentPrediction, TreatmentRanking,
};
use treatrank_core::gbtree::{fit, GbtParams, TreeNode};
use treatrank_core::model::{
    complete_case_filter, stratified_split, Arm, Dataset, PatientRecord, SplitSpec, StudyConfig,
};
use treatrank_core::presets::uniti_generator;
use treatrank_core::synth::{generate, GroundTruth};
use treatrank_core::validate::welch::welch_ttest;
use treatrank_core::validate::{build_report, overfit_check, ReportHeader, ValidationReport};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    check(
        t < limit,
        format!("{detail}; {:.2}s (limit {}s)", t.as_secs_f64(), limit.as_secs()),
    )
}

// ---------------------------------------------------------------------------
// 1: depth-1 root split against exhaustive search
// ---------------------------------------------------------------------------

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = Vec::new();
    for case in 0..30 {
        let (x, y) = split_instance(&mut rng);
        let lambda = [0.0, 1.0, 3.0][case % 3];
        let mlw = [1.0, 2.0][case % 2];
        let names: Vec<String> = (0..x[0].len()).map(|i| format!("f{i}")).collect();
        let params = GbtParams {
            n_trees: 1,
            learning_rate: 1.0,
            max_depth: 1,
            min_leaf_weight: mlw,
            l2_lambda: lambda,
            colsample: 1.0,
            seed: 0,
        };
        let model = fit(&x, &y, &names, &params).map_err(|e| e.to_string())?;
        let got = match &model.trees()[0] {
            TreeNode::Leaf { .. } => None,
            TreeNode::Split {
                feature,
                threshold,
                default_goes_left,
                ..
            } => Some(Best {
                feature: names.iter().position(|n| n == feature).unwrap(),
                threshold: *threshold,
                default_left: *default_goes_left,
            }),
        };
        if got != exhaustive_root_split(&x, &y, lambda, mlw) {
            mismatches.push(case);
        }
    }
    if !mismatches.is_empty() {
        return Err(format!("mismatching instances {mismatches:?}"));
    }
    within(Duration::from_secs(10), start, "30/30 instances match exactly".into())
}

// ---------------------------------------------------------------------------
// 2: counterfactual cells against per-cell recomputation
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let train = complete_case_filter(&generate(&six_arm_generator(2, 200)).unwrap().0);
    let cfg = SimilarityConfig::fit(&train, 5, Aggregation::Normalized).unwrap();
    let matrix = complete_matrix(&train, &cfg).unwrap().matrix;
    let oracle = SimilarityOracle::new(&train);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let picks = rand::seq::index::sample(&mut rng, train.len(), 20).into_vec();
    let (mut cells, mut worst) = (0, 0.0f64);
    for i in picks {
        let x = &train.records()[i];
        for arm in train.study().arms() {
            let got = matrix.cell(&x.id, &arm.id);
            let want = if arm.id == x.arm_assigned {
                Some((x.improvement().unwrap(), Provenance::Verified))
            } else if !x.is_eligible(arm) {
                None
            } else {
                Some((
                    oracle.cell(x, &arm.id, &train, 5, Aggregation::Normalized),
                    Provenance::Counterfactual,
                ))
            };
            match (got, want) {
                (None, None) => {}
                (Some(c), Some((v, p))) if c.provenance == p => worst = worst.max((c.value - v).abs()),
                (g, w) => return Err(format!("cell ({}, {}): got {g:?}, want {w:?}", x.id, arm.id)),
            }
            cells += 1;
        }
    }
    if worst >= 1e-12 {
        return Err(format!("max deviation {worst:e}"));
    }
    within(
        Duration::from_secs(10),
        start,
        format!("{cells} cells of 20 patients, max deviation {worst:e}"),
    )
}

// ---------------------------------------------------------------------------
// 3: centering of adjusted targets
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut cohorts = 0;
    for seed in 0..5 {
        for cfg in [uniti_generator(seed, 600, 2.0), six_arm_generator(seed, 300)] {
            let ds = complete_case_filter(&generate(&cfg).unwrap().0);
            let (table, _) = build_adjustment_table(&ds);
            let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for r in ds.records() {
                let a = adjust(r.improvement().unwrap(), &r.arm_assigned, &table).unwrap();
                let e = sums.entry(&r.arm_assigned).or_default();
                e.0 += a;
                e.1 += 1;
            }
            for (s, n) in sums.values() {
                worst = worst.max((s / *n as f64).abs());
            }
            cohorts += 1;
        }
    }
    check(
        worst < 1e-9,
        format!("{cohorts} cohorts, max |arm mean of adjusted target| = {worst:e}"),
    )
}

// ---------------------------------------------------------------------------
// 4: Welch against reference values
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct WelchCase {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct WelchOracle {
    cases: Vec<WelchCase>,
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let oracle: WelchOracle = serde_json::from_str(include_str!("../../core/tests/data/welch_oracle.json")).unwrap();
    let mut worst = 0.0f64;
    for c in &oracle.cases {
        let r = welch_ttest(&c.a, &c.b).map_err(|e| e.to_string())?;
        worst = worst
            .max((r.statistic - c.t).abs())
            .max((r.df - c.df).abs())
            .max((r.p_two_sided - c.p).abs());
    }
    if oracle.cases.len() != 10 || worst >= 1e-6 {
        return Err(format!("{} cases, max deviation {worst:e}", oracle.cases.len()));
    }
    within(
        Duration::from_secs(1),
        start,
        format!("10 pairs, max deviation {worst:e}"),
    )
}

// ---------------------------------------------------------------------------
// 5, 6, 8: synthetic trials with strong heterogeneity
// ---------------------------------------------------------------------------

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Trial {
    truth: GroundTruth,
    complete: Dataset,
    train: Dataset,
    holdout: Dataset,
    model: EnsembleModel,
    report: ValidationReport,
}

fn header(seed: u64) -> ReportHeader {
    ReportHeader {
        tool: "acceptance".into(),
        version: String::new(),
        study_hash: String::new(),
        config_hash: String::new(),
        seed,
    }
}

fn acceptance_grid() -> Vec<GbtParams> {
    [2, 3]
        .into_iter()
        .map(|max_depth| GbtParams {
            n_trees: 100,
            max_depth,
            ..GbtParams::default()
        })
        .collect()
}

fn run_trial(seed: u64) -> Trial {
    // Interaction coefficients are 2x the noise sd.
    let cfg = uniti_generator(seed, 2000, 2.0);
    let (ds, truth) = generate(&cfg).unwrap();
    let complete = complete_case_filter(&ds);
    let split = stratified_split(&complete, &SplitSpec::new(0.25, seed).unwrap()).unwrap();
    let settings = EnsembleSettings {
        grid: acceptance_grid(),
        n_folds: 5,
        seed,
        ..EnsembleSettings::default()
    };
    let model = fit_ensemble(&split.train, &settings).unwrap().model;
    let report = build_report(
        &model,
        &split.train,
        &split.holdout,
        &model.similarity,
        7.0,
        header(seed),
    )
    .unwrap();
    Trial {
        truth,
        complete,
        train: split.train,
        holdout: split.holdout,
        model,
        report,
    }
}

static TRIALS: OnceLock<(Vec<Trial>, Duration)> = OnceLock::new();

fn trials() -> &'static (Vec<Trial>, Duration) {
    TRIALS.get_or_init(|| {
        let start = Instant::now();
        let t = SEEDS.iter().map(|&s| run_trial(s)).collect();
        (t, start.elapsed())
    })
}

fn criterion_5() -> Outcome {
    let (trials, elapsed) = trials();
    let mut higher = 0;
    let mut significant = 0;
    let mut parts = Vec::new();
    for (seed, t) in SEEDS.iter().zip(trials) {
        let tr = t.report.binary_table["TRUE"].mean_improvement.unwrap_or(f64::NAN);
        let fa = t.report.binary_table["FALSE"].mean_improvement.unwrap_or(f64::NAN);
        let p = t
            .report
            .welch
            .iter()
            .find(|w| w.metric == "improvement")
            .and_then(|w| w.result)
            .map(|r| r.p_two_sided);
        higher += (tr > fa) as usize;
        significant += p.is_some_and(|p| p < 0.05) as usize;
        parts.push(format!(
            "seed {seed}: {tr:.2} vs {fa:.2}, p={:.1e}",
            p.unwrap_or(f64::NAN)
        ));
    }
    let ok = higher >= 4 && significant >= 3 && *elapsed < Duration::from_secs(300);
    check(
        ok,
        format!(
            "TRUE>FALSE in {higher}/5, p<0.05 in {significant}/5, {:.1}s for 5 trials (limit 300s) [{}]",
            elapsed.as_secs_f64(),
            parts.join("; ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let (trials, _) = trials();
    let mut wins = 0;
    let mut parts = Vec::new();
    for (seed, t) in SEEDS.iter().zip(trials) {
        let (mut top, mut random) = (0.0, 0.0);
        for l in &t.report.alignment {
            let x = t.complete.get(&l.patient).unwrap();
            top += t.truth.effect(&x.id, &l.top1_arm).unwrap();
            let eligible: Vec<f64> = t
                .complete
                .study()
                .arms()
                .iter()
                .filter(|a| x.is_eligible(a))
                .map(|a| t.truth.effect(&x.id, &a.id).unwrap())
                .collect();
            random += eligible.iter().sum::<f64>() / eligible.len() as f64;
        }
        let n = t.report.alignment.len() as f64;
        let margin = (top - random) / n;
        wins += (margin > 0.0) as usize;
        parts.push(format!("seed {seed}: +{margin:.2}"));
    }
    check(wins >= 4, format!("positive margin in {wins}/5 [{}]", parts.join("; ")))
}

/// Recommends each training patient's own assigned arm.
struct Memorizer {
    study: StudyConfig,
    seen: BTreeMap<String, String>,
}

impl Ranker for Memorizer {
    fn study(&self) -> &StudyConfig {
        &self.study
    }

    fn rank(&self, x: &PatientRecord) -> treatrank_core::Result<TreatmentRanking> {
        let mut r = TreatmentRanking {
            patient: x.id.clone(),
            predictions: Vec::new(),
        };
        for a in self.study.arms().iter().filter(|a| x.is_eligible(a)) {
            r.predictions.push(TreatmentPrediction {
                arm: a.id.clone(),
                predicted_improvement: if self.seen.get(&x.id) == Some(&a.id) { 1.0 } else { 0.0 },
                confidence: 1.0,
                contributors: Vec::new(),
            });
        }
        r.sort();
        Ok(r)
    }

    fn component_prediction(&self, _: &PatientRecord, _: &Arm, _: &str) -> treatrank_core::Result<f64> {
        Ok(0.0)
    }
}

fn criterion_8() -> Outcome {
    let (trials, _) = trials();
    let t = &trials[0];
    let memorizer = Memorizer {
        study: t.model.study().clone(),
        seen: t
            .train
            .records()
            .iter()
            .map(|r| (r.id.clone(), r.arm_assigned.clone()))
            .collect(),
    };
    let m = overfit_check(&memorizer, &t.train, &t.complete, &t.holdout).unwrap();
    let clean = trials.iter().filter(|t| !t.report.overfit.flag).count();
    let rates: Vec<String> = trials
        .iter()
        .map(|t| {
            format!(
                "{:.3}/{:.3}",
                t.report.overfit.rate_heldout, t.report.overfit.rate_complete
            )
        })
        .collect();
    check(
        m.flag && clean >= 4,
        format!(
            "memorizer flagged={} (complete {:.3}, heldout {:.3}); ensemble unflagged in {clean}/5 [heldout/complete {}]",
            m.flag,
            m.rate_complete,
            m.rate_heldout,
            rates.join(", ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 7: restricted voting
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let (trials, _) = trials();
    let t = &trials[0];
    let study = t.model.study();
    let (mut patients, mut predictions, mut violations) = (0, 0, 0);
    for x in t.holdout.records().iter().take(100) {
        let r = t.model.rank_treatments(x).map_err(|e| e.to_string())?;
        for p in &r.predictions {
            let arm = study.arm(&p.arm).unwrap();
            let names: Vec<&str> = p.contributors.iter().map(|c| c.therapy.as_str()).collect();
            let mut expected: Vec<&str> = arm.components.iter().map(String::as_str).collect();
            let mut got = names.clone();
            expected.sort();
            got.sort();
            if names.iter().any(|c| !arm.contains(c)) || got != expected {
                violations += 1;
            }
            predictions += 1;
        }
        patients += 1;
    }
    check(
        patients == 100 && violations == 0,
        format!("{patients} patients, {predictions} predictions, {violations} with a foreign contributor"),
    )
}

// ---------------------------------------------------------------------------
// 9, 10: CLI pipeline
// ---------------------------------------------------------------------------

fn treatrank(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_treatrank"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn write_configs(dir: &Path) -> std::path::PathBuf {
    let gen = uniti_generator(9, 400, 2.0);
    std::fs::write(dir.join("generator.json"), serde_json::to_string_pretty(&gen).unwrap()).unwrap();
    let run = serde_json::json!({
        "seed": 9,
        "generator": "generator.json",
        "split": {"holdout_fraction": 0.25},
        "similarity": {"k": 5, "aggregation": "normalized"},
        "grid": [{"n_trees": 40, "max_depth": 2}, {"n_trees": 40, "max_depth": 3}],
        "n_folds": 5
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&run).unwrap()).unwrap();
    path
}

struct PipelineRun {
    files: BTreeMap<String, Vec<u8>>,
}

fn pipeline(config: &Path, out: &Path) -> Result<PipelineRun, String> {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    treatrank(&["generate", "--config", c, "--out", o])?;
    treatrank(&["train", "--config", c, "--out", o])?;
    let model = out.join("model.json");
    treatrank(&[
        "validate",
        "--config",
        c,
        "--model",
        model.to_str().unwrap(),
        "--out",
        o,
    ])?;
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(out).unwrap() {
        let e = e.unwrap();
        files.insert(
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).unwrap(),
        );
    }
    Ok(PipelineRun { files })
}

static PIPELINE: OnceLock<Result<(PipelineRun, PipelineRun), String>> = OnceLock::new();

fn pipelines() -> &'static Result<(PipelineRun, PipelineRun), String> {
    PIPELINE.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let config = write_configs(tmp.path());
        let a = pipeline(&config, &tmp.path().join("a"))?;
        let b = pipeline(&config, &tmp.path().join("b"))?;
        Ok((a, b))
    })
}

fn criterion_9() -> Outcome {
    let (a, b) = pipelines().as_ref().map_err(Clone::clone)?;
    for required in ["model.json", "report.json", "dataset.csv", "split.json"] {
        if !a.files.contains_key(required) {
            return Err(format!("missing {required}"));
        }
    }
    let differing: Vec<&String> = a
        .files
        .iter()
        .filter(|(name, bytes)| b.files.get(*name) != Some(bytes))
        .map(|(name, _)| name)
        .collect();
    check(
        differing.is_empty() && a.files.len() == b.files.len(),
        format!("{} files compared, differing: {differing:?}", a.files.len()),
    )
}

fn criterion_10() -> Outcome {
    let (a, _) = pipelines().as_ref().map_err(Clone::clone)?;
    let report: serde_json::Value = serde_json::from_slice(&a.files["report.json"]).unwrap();
    let count = |key: &str| report[key].as_array().map_or(0, Vec::len);
    let (v, c, arm) = (
        count("rmse_per_therapy_verified"),
        count("rmse_per_therapy_counterfactual"),
        count("rmse_per_arm_per_contributor"),
    );
    let singles = report["rmse_per_arm_per_contributor"].as_array().map_or(0, |rows| {
        rows.iter()
            .filter(|r| !r["arm"].as_str().unwrap().contains('+'))
            .count()
    });
    check(
        v == 4 && c == 4 && arm == 16 && singles == 4,
        format!("verified {v}, counterfactual {c}, per-arm {arm} ({singles} from single arms)"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (1, "brute-force split equivalence", criterion_1),
        (2, "counterfactual oracle equivalence", criterion_2),
        (3, "adjustment centering", criterion_3),
        (4, "Welch t-test oracle", criterion_4),
        (5, "direction of effect", criterion_5),
        (6, "top-1 true effect beats random arm", criterion_6),
        (7, "restricted voting audit", criterion_7),
        (8, "overfit check calibration", criterion_8),
        (9, "pipeline determinism", criterion_9),
        (10, "report table shape", criterion_10),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name}: {d}"),
            Err(d) => {
                println!("criterion {id:>2} FAIL  {name}: {d}");
                failed.push(id);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: 10/10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
