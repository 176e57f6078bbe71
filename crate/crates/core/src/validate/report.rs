use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::welch::{welch_ttest, WelchResult};
use super::{
    alignment_rate, group_names, group_stats, group_values, overfit_flag, rmse_per_arm,
    rmse_per_therapy_counterfactual, rmse_per_therapy_verified, AlignmentLabel, GroupBy, GroupStats,
};
use crate::counterfactual::SimilarityConfig;
use crate::ensemble::Ranker;
use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub tool: String,
    pub version: String,
    pub study_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

impl ReportHeader {
    /// `key=value` lines for CSV comment headers.
    pub fn comment_lines(&self) -> Vec<String> {
        vec![
            format!("tool={} version={}", self.tool, self.version),
            format!("study_hash={}", self.study_hash),
            format!("config_hash={}", self.config_hash),
            format!("seed={}", self.seed),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TherapyRmse {
    pub therapy: String,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRmse {
    pub arm: String,
    pub therapy: String,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelchEntry {
    pub metric: String,
    pub n_true: usize,
    pub n_false: usize,
    pub mean_true: Option<f64>,
    pub mean_false: Option<f64>,
    pub result: Option<WelchResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitCheck {
    pub rate_train: f64,
    pub rate_heldout: f64,
    pub rate_complete: f64,
    pub flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub header: ReportHeader,
    pub significance_threshold: f64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub rmse_per_therapy_verified: Vec<TherapyRmse>,
    pub rmse_per_therapy_counterfactual: Vec<TherapyRmse>,
    pub rmse_per_arm_per_contributor: Vec<ArmRmse>,
    /// Alignment on the complete cohort (train and holdout).
    pub binary_table: BTreeMap<String, GroupStats>,
    pub ternary_table: BTreeMap<String, GroupStats>,
    pub holdout_binary_table: BTreeMap<String, GroupStats>,
    pub holdout_ternary_table: BTreeMap<String, GroupStats>,
    pub welch: Vec<WelchEntry>,
    pub overfit: OverfitCheck,
    pub alignment: Vec<AlignmentLabel>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn therapy_rows(t: super::RmseTable<String>) -> Vec<TherapyRmse> {
    t.values
        .iter()
        .map(|(k, &rmse)| TherapyRmse {
            therapy: k.clone(),
            rmse,
            n: t.counts[k],
        })
        .collect()
}

fn welch_entries(labels: &[AlignmentLabel], cohort: &Dataset) -> Result<Vec<WelchEntry>> {
    let values = group_values(labels, cohort, GroupBy::Binary)?;
    let (t, f) = (&values["TRUE"], &values["FALSE"]);
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    let entry = |metric: &str, a: &[f64], b: &[f64]| {
        let (result, note) = match welch_ttest(a, b) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        WelchEntry {
            metric: metric.to_string(),
            n_true: a.len(),
            n_false: b.len(),
            mean_true: mean(a),
            mean_false: mean(b),
            result,
            note,
        }
    };
    Ok(vec![
        entry("value", &t.finals, &f.finals),
        entry("improvement", &t.improvements, &f.improvements),
        entry("percentage", &t.pcts, &f.pcts),
    ])
}

/// Runs every evaluation. `train` and `holdout` must be complete-case and
/// come from the same study as the model.
pub fn build_report(
    model: &(dyn Ranker + Sync),
    train: &Dataset,
    holdout: &Dataset,
    cfg: &SimilarityConfig,
    threshold: f64,
    header: ReportHeader,
) -> Result<ValidationReport> {
    if train.study().hash() != model.study().hash() || holdout.study().hash() != model.study().hash() {
        return Err(Error::Mismatch("datasets and model come from different studies".into()));
    }
    let mut warnings = Vec::new();
    let complete = train.union(holdout)?;
    if let Some(r) = complete.records().iter().find(|r| !r.is_complete()) {
        return Err(Error::MissingOutcome(r.id.clone()));
    }

    let verified = rmse_per_therapy_verified(model, holdout)?;
    let counterfactual = rmse_per_therapy_counterfactual(model, holdout, train, cfg)?;
    let per_arm = rmse_per_arm(model, holdout)?;
    warnings.extend(verified.warnings.iter().cloned());
    warnings.extend(counterfactual.warnings.iter().cloned());
    warnings.extend(per_arm.warnings.iter().cloned());

    let labels = super::align(model, &complete)?;
    let holdout_ids: BTreeSet<&str> = holdout.records().iter().map(|r| r.id.as_str()).collect();
    let (held_labels, train_labels): (Vec<AlignmentLabel>, Vec<AlignmentLabel>) = labels
        .iter()
        .cloned()
        .partition(|l| holdout_ids.contains(l.patient.as_str()));

    let rate_heldout = alignment_rate(&held_labels);
    let rate_complete = alignment_rate(&labels);
    let overfit = OverfitCheck {
        rate_train: alignment_rate(&train_labels),
        rate_heldout,
        rate_complete,
        flag: overfit_flag(rate_heldout, rate_complete),
    };
    if overfit.flag {
        warnings.push("overfit check raised: alignment on the complete cohort is suspiciously high".into());
    }

    Ok(ValidationReport {
        header,
        significance_threshold: threshold,
        n_train: train.len(),
        n_holdout: holdout.len(),
        rmse_per_therapy_verified: therapy_rows(verified),
        rmse_per_therapy_counterfactual: therapy_rows(counterfactual),
        rmse_per_arm_per_contributor: per_arm
            .values
            .iter()
            .map(|((arm, therapy), &rmse)| ArmRmse {
                arm: arm.clone(),
                therapy: therapy.clone(),
                rmse,
                n: per_arm.counts[&(arm.clone(), therapy.clone())],
            })
            .collect(),
        binary_table: group_stats(&labels, &complete, GroupBy::Binary, threshold)?,
        ternary_table: group_stats(&labels, &complete, GroupBy::Ternary, threshold)?,
        holdout_binary_table: group_stats(&held_labels, holdout, GroupBy::Binary, threshold)?,
        holdout_ternary_table: group_stats(&held_labels, holdout, GroupBy::Ternary, threshold)?,
        welch: welch_entries(&labels, &complete)?,
        overfit,
        alignment: labels,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub group: String,
    pub metric: &'static str,
    pub value: f64,
}

/// Per-patient values in long format, one row per (patient, metric).
pub fn plot_data(labels: &[AlignmentLabel], cohort: &Dataset, by: GroupBy) -> Result<Vec<PlotRow>> {
    let values = group_values(labels, cohort, by)?;
    let mut rows = Vec::new();
    for g in group_names(by) {
        let v = &values[*g];
        for (metric, xs) in [
            ("final_score", &v.finals),
            ("improvement", &v.improvements),
            ("improvement_pct", &v.pcts),
        ] {
            rows.extend(xs.iter().map(|&value| PlotRow {
                group: g.to_string(),
                metric,
                value,
            }));
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

struct CsvOut {
    w: BufWriter<File>,
}

impl CsvOut {
    fn create(path: &Path, comments: &[String], header: &str) -> Result<Self> {
        let mut w = BufWriter::new(File::create(path)?);
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "{header}")?;
        Ok(CsvOut { w })
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

fn write_group_table(
    path: &Path,
    comments: &[String],
    tables: [(&str, &BTreeMap<String, GroupStats>); 2],
    by: GroupBy,
) -> Result<()> {
    let mut out = CsvOut::create(
        path,
        comments,
        "cohort,group,count,mean_final,mean_improvement,mean_improvement_pct,significant_rate",
    )?;
    for (cohort, table) in tables {
        for g in group_names(by) {
            let s = &table[*g];
            out.row(&[
                cohort.to_string(),
                g.to_string(),
                s.count.to_string(),
                opt(s.mean_final),
                opt(s.mean_improvement),
                opt(s.mean_improvement_pct),
                opt(s.significant_rate),
            ])?;
        }
    }
    out.finish()
}

/// Writes every report table and the plot data as CSV files into `dir`.
/// `complete` is the train plus holdout cohort the report was built on.
pub fn write_tables(report: &ValidationReport, complete: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let comments = report.header.comment_lines();
    let mut written = Vec::new();
    let mut path = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };

    for (name, rows) in [
        ("rmse_therapy_verified.csv", &report.rmse_per_therapy_verified),
        (
            "rmse_therapy_counterfactual.csv",
            &report.rmse_per_therapy_counterfactual,
        ),
    ] {
        let mut out = CsvOut::create(&path(name), &comments, "therapy,rmse,n")?;
        for r in rows {
            out.row(&[r.therapy.clone(), r.rmse.to_string(), r.n.to_string()])?;
        }
        out.finish()?;
    }

    let mut out = CsvOut::create(&path("rmse_arm_contributor.csv"), &comments, "arm,therapy,rmse,n")?;
    for r in &report.rmse_per_arm_per_contributor {
        out.row(&[r.arm.clone(), r.therapy.clone(), r.rmse.to_string(), r.n.to_string()])?;
    }
    out.finish()?;

    write_group_table(
        &path("alignment_binary.csv"),
        &comments,
        [
            ("complete", &report.binary_table),
            ("holdout", &report.holdout_binary_table),
        ],
        GroupBy::Binary,
    )?;
    write_group_table(
        &path("alignment_ternary.csv"),
        &comments,
        [
            ("complete", &report.ternary_table),
            ("holdout", &report.holdout_ternary_table),
        ],
        GroupBy::Ternary,
    )?;

    let mut out = CsvOut::create(
        &path("welch.csv"),
        &comments,
        "metric,n_true,n_false,mean_true,mean_false,statistic,df,p_two_sided,p_bonferroni",
    )?;
    for e in &report.welch {
        let r = e.result;
        out.row(&[
            e.metric.clone(),
            e.n_true.to_string(),
            e.n_false.to_string(),
            opt(e.mean_true),
            opt(e.mean_false),
            opt(r.map(|r| r.statistic)),
            opt(r.map(|r| r.df)),
            opt(r.map(|r| r.p_two_sided)),
            opt(r.map(|r| r.p_bonferroni)),
        ])?;
    }
    out.finish()?;

    let o = &report.overfit;
    let mut out = CsvOut::create(
        &path("overfit.csv"),
        &comments,
        "rate_train,rate_heldout,rate_complete,flag",
    )?;
    out.row(&[
        o.rate_train.to_string(),
        o.rate_heldout.to_string(),
        o.rate_complete.to_string(),
        o.flag.to_string(),
    ])?;
    out.finish()?;

    let mut out = CsvOut::create(
        &path("alignment_labels.csv"),
        &comments,
        "patient_id,rct_arm,top1_arm,binary,ternary",
    )?;
    for l in &report.alignment {
        out.row(&[
            l.patient.clone(),
            l.rct_arm.clone(),
            l.top1_arm.clone(),
            if l.binary { "TRUE" } else { "FALSE" }.to_string(),
            l.ternary.to_string(),
        ])?;
    }
    out.finish()?;

    for (name, by) in [
        ("plot_binary.csv", GroupBy::Binary),
        ("plot_ternary.csv", GroupBy::Ternary),
    ] {
        let mut out = CsvOut::create(&path(name), &comments, "group,metric,value")?;
        for r in plot_data(&report.alignment, complete, by)? {
            out.row(&[r.group, r.metric.to_string(), r.value.to_string()])?;
        }
        out.finish()?;
    }
    Ok(written)
}
