use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treatrank_core::adjust::training_set_id;
use treatrank_core::model::{complete_case_filter, read_patients, save_dataset, stratified_split, Dataset, Split};
use treatrank_core::validate::{build_report, write_tables, ReportHeader};
use treatrank_core::{ensemble, EnsembleModel, Error, Result, StudyConfig, TreatmentRanking};

use crate::config::RunConfig;

const TOOL: &str = "treatrank";

fn header(cfg: &RunConfig, study: &StudyConfig) -> ReportHeader {
    ReportHeader {
        tool: TOOL.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        study_hash: study.hash(),
        config_hash: cfg.hash.clone(),
        seed: cfg.seed,
    }
}

fn out_dir(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn generate(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let gen = cfg.generator()?;
    let (ds, gt) = treatrank_core::synth::generate(gen)?;
    let dir = out_dir(&cfg, out)?;
    let mut comments = header(&cfg, ds.study()).comment_lines();
    comments.push(format!("generator_seed={}", gen.seed));

    save_dataset(&ds, &comments, dir.join("dataset.csv"))?;
    let mut buf = Vec::new();
    gt.write_csv(&comments, &mut buf)?;
    fs::write(dir.join("ground_truth.csv"), buf)?;
    let mut study = ds.study().to_json();
    study.push('\n');
    fs::write(dir.join("study.json"), study)?;

    let complete = ds.records().iter().filter(|r| r.is_complete()).count();
    println!("{} patients, {} with a final score", ds.len(), complete);
    println!("{:<12} {:>6}", "arm", "count");
    let counts = ds.arm_counts();
    for arm in ds.study().arms() {
        println!("{:<12} {:>6}", arm.id, counts.get(&arm.id).copied().unwrap_or(0));
    }
    println!("wrote {}", dir.display());
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct SplitManifest {
    provenance: ReportHeader,
    holdout_fraction: f64,
    train: Vec<String>,
    holdout: Vec<String>,
}

#[derive(Serialize)]
struct ModelFileOut<'a> {
    provenance: ReportHeader,
    model: &'a EnsembleModel,
}

#[derive(Deserialize)]
struct ModelFileIn {
    provenance: ReportHeader,
    model: EnsembleModel,
}

fn load_model(path: &Path, cfg: &RunConfig) -> Result<EnsembleModel> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read model `{}`: {e}", path.display())))?;
    let file: ModelFileIn = serde_json::from_str(&text)?;
    if file.provenance.tool != TOOL {
        return Err(Error::Mismatch(format!(
            "`{}` was not written by {TOOL}",
            path.display()
        )));
    }
    file.model.check()?;
    if file.model.study_hash != cfg.study.hash() {
        return Err(Error::Mismatch(format!(
            "model study {} does not match the configured study {}",
            file.model.study_hash,
            cfg.study.hash()
        )));
    }
    Ok(file.model)
}

fn split_cohort(cfg: &RunConfig) -> Result<(Dataset, Split)> {
    let ds = cfg.load_data()?;
    if ds.study().hash() != cfg.study.hash() {
        return Err(Error::Mismatch(
            "dataset study differs from the configured study".into(),
        ));
    }
    let complete = complete_case_filter(&ds);
    if complete.is_empty() {
        return Err(Error::Config("no patient has a final score".into()));
    }
    let split = stratified_split(&complete, &cfg.split)?;
    Ok((complete, split))
}

pub fn train(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (complete, split) = split_cohort(&cfg)?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let fit = ensemble::fit_ensemble(&split.train, &cfg.settings)?;
    for w in &fit.warnings {
        eprintln!("warning: {w}");
    }
    let dir = out_dir(&cfg, out)?;
    let head = header(&cfg, &cfg.study);
    write_json(
        &dir.join("model.json"),
        &ModelFileOut {
            provenance: head.clone(),
            model: &fit.model,
        },
    )?;
    write_json(
        &dir.join("split.json"),
        &SplitManifest {
            provenance: head,
            holdout_fraction: cfg.split.holdout_fraction,
            train: split.train.ids(),
            holdout: split.holdout.ids(),
        },
    )?;

    println!(
        "{} complete cases: {} train, {} holdout",
        complete.len(),
        split.train.len(),
        split.holdout.len()
    );
    println!(
        "{:<8} {:>10} {:>10} {:>12} {:>6}",
        "therapy", "cv_mae", "cv_rmse", "confidence", "grid"
    );
    for m in &fit.model.therapy_models {
        println!(
            "{:<8} {:>10.4} {:>10.4} {:>12.6} {:>6}",
            m.therapy, m.cv_mean_mae, m.cv_mean_rmse, m.confidence, m.grid_index
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
}

pub fn validate(config: &Path, model_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = load_model(model_path, &cfg)?;
    let (_, split) = split_cohort(&cfg)?;
    if training_set_id(&split.train) != model.adjustment.provenance {
        return Err(Error::Mismatch(
            "the configured split does not reproduce the model's training set".into(),
        ));
    }
    let report = build_report(
        &model,
        &split.train,
        &split.holdout,
        &model.similarity,
        cfg.significance_threshold,
        header(&cfg, &cfg.study),
    )?;
    let dir = out_dir(&cfg, out)?;
    let mut text = report.to_json();
    text.push('\n');
    fs::write(dir.join("report.json"), text)?;
    let complete = split.train.union(&split.holdout)?;
    write_tables(&report, &complete, &dir)?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut s = String::new();
    let _ = writeln!(s, "binary alignment (complete cohort)");
    for (g, st) in &report.binary_table {
        let _ = writeln!(
            s,
            "  {g:<6} n={:<5} final={} improvement={} pct={} >{}={}",
            st.count,
            fmt_opt(st.mean_final),
            fmt_opt(st.mean_improvement),
            fmt_opt(st.mean_improvement_pct),
            report.significance_threshold,
            fmt_opt(st.significant_rate)
        );
    }
    for e in &report.welch {
        match &e.result {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "  welch {:<12} t={:.3} df={:.1} p={:.3e} p_bonf={:.3e}",
                    e.metric, r.statistic, r.df, r.p_two_sided, r.p_bonferroni
                );
            }
            None => {
                let _ = writeln!(s, "  welch {:<12} n/a ({})", e.metric, e.note.as_deref().unwrap_or(""));
            }
        }
    }
    let o = &report.overfit;
    let _ = writeln!(
        s,
        "overfit check: heldout {:.3}, complete {:.3}, flag {}",
        o.rate_heldout, o.rate_complete, o.flag
    );
    let _ = write!(s, "wrote {}", dir.display());
    println!("{s}");
    Ok(())
}

fn ranking_csv(rankings: &[TreatmentRanking], comments: &[String]) -> String {
    let mut s = String::new();
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    s.push_str("patient_id,rank,arm,predicted_improvement,confidence\n");
    for r in rankings {
        for (i, p) in r.predictions.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.patient,
                i + 1,
                p.arm,
                p.predicted_improvement,
                p.confidence
            );
        }
    }
    s
}

pub fn rank(config: &Path, model_path: &Path, patients: &Path, out: Option<PathBuf>, json: bool) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let model = load_model(model_path, &cfg)?;
    let file = fs::File::open(patients)
        .map_err(|e| Error::Config(format!("cannot read patients `{}`: {e}", patients.display())))?;
    let records = read_patients(file, &model.study)?;
    if records.is_empty() {
        return Err(Error::Config("patient file has no rows".into()));
    }
    let rankings = records
        .iter()
        .map(|x| model.rank_treatments(x))
        .collect::<Result<Vec<_>>>()?;

    if let Some(path) = out {
        fs::write(
            &path,
            ranking_csv(&rankings, &header(&cfg, &model.study).comment_lines()),
        )?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if json {
        writeln!(w, "{}", serde_json::to_string_pretty(&rankings)?)?;
        return Ok(());
    }
    for r in &rankings {
        writeln!(w, "patient {}", r.patient)?;
        writeln!(
            w,
            "  {:>4}  {:<10} {:>12} {:>12}",
            "rank", "arm", "improvement", "confidence"
        )?;
        for (i, p) in r.predictions.iter().enumerate() {
            writeln!(
                w,
                "  {:>4}  {:<10} {:>12.3} {:>12.6}",
                i + 1,
                p.arm,
                p.predicted_improvement,
                p.confidence
            )?;
        }
    }
    Ok(())
}
