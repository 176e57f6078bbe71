//! Gradient-boosted regression trees with learned default directions for
//! missing values and per-tree feature subsampling.
//!
//! Squared-error loss: each round fits a tree to the residual gradients
//! `g_i = pred_i - y_i` (unit hessians). A node with gradient sum `G` and
//! `H` instances gets leaf weight `-G / (H + lambda)`, scaled by the
//! learning rate at fit time. Splits maximize
//!
//! ```text
//! gain = 1/2 * [ G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda) ]
//! ```
//!
//! over every (feature, midpoint threshold, default direction) triple;
//! instances with the feature missing are sent to the default side. Ties
//! keep the first candidate in (feature order, ascending threshold, left
//! before right) order, and only splits with positive gain are taken.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Row-major feature matrix with optional cells.
pub type Matrix = Vec<Vec<Option<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_trees: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_leaf_weight: f64,
    pub l2_lambda: f64,
    pub colsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_trees: 100,
            learning_rate: 0.1,
            max_depth: 3,
            min_leaf_weight: 1.0,
            l2_lambda: 1.0,
            colsample: 0.8,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gbt params: {m}")));
        if self.n_trees < 1 {
            return bad("n_trees must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.min_leaf_weight >= 1.0) {
            return bad("min_leaf_weight must be >= 1");
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be >= 0");
        }
        if !(self.colsample > 0.0 && self.colsample <= 1.0) {
            return bad("colsample must be in (0, 1]");
        }
        Ok(())
    }
}

/// The default tuning grid: 2 x 2 x 3 combinations.
pub fn default_grid() -> Vec<GbtParams> {
    let mut grid = Vec::new();
    for n_trees in [50, 200] {
        for learning_rate in [0.05, 0.1] {
            for max_depth in [2, 3, 4] {
                grid.push(GbtParams {
                    n_trees,
                    learning_rate,
                    max_depth,
                    min_leaf_weight: 1.0,
                    l2_lambda: 1.0,
                    colsample: 0.8,
                    seed: 0,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: String,
        #[serde(skip)]
        index: usize,
        threshold: f64,
        default_goes_left: bool,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn eval(&self, row: &[Option<f64>]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    index,
                    threshold,
                    default_goes_left,
                    left,
                    right,
                    ..
                } => {
                    let go_left = match row[*index] {
                        Some(v) => v < *threshold,
                        None => *default_goes_left,
                    };
                    node = if go_left { left } else { right };
                }
            }
        }
    }

    fn resolve(&mut self, names: &[String]) -> Result<()> {
        match self {
            TreeNode::Leaf { value } => {
                if !value.is_finite() {
                    return Err(Error::Invariant("non-finite leaf value".into()));
                }
                Ok(())
            }
            TreeNode::Split {
                feature,
                index,
                left,
                right,
                ..
            } => {
                *index = names
                    .iter()
                    .position(|n| n == feature)
                    .ok_or_else(|| Error::UnknownFeature(feature.clone()))?;
                left.resolve(names)?;
                right.resolve(names)
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Names of all features this tree splits on.
    pub fn split_features(&self, out: &mut Vec<String>) {
        if let TreeNode::Split {
            feature, left, right, ..
        } = self
        {
            out.push(feature.clone());
            left.split_features(out);
            right.split_features(out);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    base_prediction: f64,
    feature_list: Vec<String>,
    params: GbtParams,
    trees: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct GbtModel {
    base_prediction: f64,
    feature_list: Vec<String>,
    params: GbtParams,
    trees: Vec<TreeNode>,
}

impl TryFrom<RawModel> for GbtModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        let mut trees = raw.trees;
        for t in &mut trees {
            t.resolve(&raw.feature_list)?;
        }
        if !raw.base_prediction.is_finite() {
            return Err(Error::Invariant("non-finite base prediction".into()));
        }
        Ok(GbtModel {
            base_prediction: raw.base_prediction,
            feature_list: raw.feature_list,
            params: raw.params,
            trees,
        })
    }
}

impl From<GbtModel> for RawModel {
    fn from(m: GbtModel) -> Self {
        RawModel {
            base_prediction: m.base_prediction,
            feature_list: m.feature_list,
            params: m.params,
            trees: m.trees,
        }
    }
}

impl GbtModel {
    /// A model with no trees.
    pub fn constant(base_prediction: f64, feature_list: Vec<String>, params: GbtParams) -> Self {
        GbtModel {
            base_prediction,
            feature_list,
            params,
            trees: Vec::new(),
        }
    }

    pub fn base_prediction(&self) -> f64 {
        self.base_prediction
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn feature_list(&self) -> &[String] {
        &self.feature_list
    }

    pub fn params(&self) -> &GbtParams {
        &self.params
    }

    /// Keeps only the first `n` trees.
    pub fn truncated(&self, n: usize) -> GbtModel {
        let mut m = self.clone();
        m.trees.truncate(n);
        m
    }

    /// Prediction for a row ordered like the feature list.
    pub fn predict_row(&self, row: &[Option<f64>]) -> Result<f64> {
        if row.len() != self.feature_list.len() {
            return Err(Error::Training(format!(
                "row has {} cells, model expects {}",
                row.len(),
                self.feature_list.len()
            )));
        }
        Ok(self.eval(row))
    }

    /// Prediction for a row given by feature name; absent names are missing.
    pub fn predict_named(&self, row: &BTreeMap<String, Option<f64>>) -> Result<f64> {
        let mut dense = vec![None; self.feature_list.len()];
        for (name, v) in row {
            let i = self
                .feature_list
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::UnknownFeature(name.clone()))?;
            dense[i] = *v;
        }
        Ok(self.eval(&dense))
    }

    pub fn predict_all(&self, x: &[Vec<Option<f64>>]) -> Result<Vec<f64>> {
        x.iter().map(|r| self.predict_row(r)).collect()
    }

    fn eval(&self, row: &[Option<f64>]) -> f64 {
        self.trees.iter().fold(self.base_prediction, |acc, t| acc + t.eval(row))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Column-major view used during fitting.
struct Columns {
    cols: Vec<Vec<Option<f64>>>,
    /// Per feature, the rows with a value, sorted by value then row.
    order: Vec<Vec<u32>>,
}

impl Columns {
    fn new(x: &[Vec<Option<f64>>], n_features: usize) -> Self {
        let mut cols = vec![Vec::with_capacity(x.len()); n_features];
        for row in x {
            for (c, v) in cols.iter_mut().zip(row) {
                c.push(*v);
            }
        }
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<u32> = (0..c.len() as u32).filter(|&r| c[r as usize].is_some()).collect();
                o.sort_by(|&a, &b| c[a as usize].unwrap().total_cmp(&c[b as usize].unwrap()));
                o
            })
            .collect();
        Columns { cols, order }
    }

    fn n_rows(&self) -> usize {
        self.cols.first().map_or(0, Vec::len)
    }
}

/// A candidate split found during the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub default_goes_left: bool,
    pub gain: f64,
}

/// Regularized gain of splitting `(g, h)` into `(gl, hl)` and the rest.
pub fn split_gain(gl: f64, hl: f64, g: f64, h: f64, lambda: f64) -> f64 {
    let (gr, hr) = (g - gl, h - hl);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

fn best_split_for_feature(
    data: &Columns,
    rows: &[usize],
    in_node: Option<&[bool]>,
    grad: &[f64],
    feature: usize,
    g_total: f64,
    params: &GbtParams,
) -> Option<SplitCandidate> {
    let col = &data.cols[feature];
    let mut present: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    let (mut g_miss, mut h_miss) = (0.0, 0.0);
    for &r in rows {
        if col[r].is_none() {
            g_miss += grad[r];
            h_miss += 1.0;
        }
    }
    match in_node {
        // Large nodes: filter the presorted order. Equal values stay in row
        // order either way, so both paths accumulate identically.
        Some(mask) => {
            for &r in &data.order[feature] {
                let r = r as usize;
                if mask[r] {
                    present.push((col[r].unwrap(), grad[r]));
                }
            }
        }
        None => {
            present.extend(rows.iter().filter_map(|&r| col[r].map(|v| (v, grad[r]))));
            present.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    if present.len() < 2 {
        return None;
    }
    let h_total = rows.len() as f64;
    let lambda = params.l2_lambda;
    let mlw = params.min_leaf_weight;

    let mut best: Option<SplitCandidate> = None;
    let (mut gl, mut hl) = (0.0, 0.0);
    for j in 0..present.len() - 1 {
        gl += present[j].1;
        hl += 1.0;
        let (v, next) = (present[j].0, present[j + 1].0);
        if v == next {
            continue;
        }
        let mut threshold = v + (next - v) / 2.0;
        if threshold <= v {
            threshold = next;
        }
        for default_goes_left in [true, false] {
            let (gl_d, hl_d) = if default_goes_left {
                (gl + g_miss, hl + h_miss)
            } else {
                (gl, hl)
            };
            if hl_d < mlw || h_total - hl_d < mlw {
                continue;
            }
            let gain = split_gain(gl_d, hl_d, g_total, h_total, lambda);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                best = Some(SplitCandidate {
                    feature,
                    threshold,
                    default_goes_left,
                    gain,
                });
            }
        }
    }
    best
}

const PARALLEL_MIN_ROWS: usize = 1024;
const PRESORT_RATIO: usize = 12;

fn find_best_split(
    data: &Columns,
    rows: &[usize],
    grad: &[f64],
    features: &[usize],
    params: &GbtParams,
) -> Option<SplitCandidate> {
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let mask = (rows.len() * PRESORT_RATIO >= data.n_rows()).then(|| {
        let mut m = vec![false; data.n_rows()];
        for &r in rows {
            m[r] = true;
        }
        m
    });
    let search = |&f: &usize| best_split_for_feature(data, rows, mask.as_deref(), grad, f, g_total, params);

    #[cfg(feature = "parallel")]
    let per_feature: Vec<Option<SplitCandidate>> = if rows.len() >= PARALLEL_MIN_ROWS {
        features.par_iter().map(search).collect()
    } else {
        features.iter().map(search).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let per_feature: Vec<Option<SplitCandidate>> = {
        let _ = PARALLEL_MIN_ROWS;
        features.iter().map(search).collect()
    };

    // Sequential reduction in feature order keeps ties deterministic.
    let mut best: Option<SplitCandidate> = None;
    for c in per_feature.into_iter().flatten() {
        if best.is_none_or(|b| c.gain > b.gain) {
            best = Some(c);
        }
    }
    best
}

struct Grower<'a> {
    data: &'a Columns,
    grad: &'a [f64],
    features: Vec<usize>,
    names: &'a [String],
    params: &'a GbtParams,
}

impl Grower<'_> {
    fn grow(&self, rows: Vec<usize>, depth: usize) -> TreeNode {
        if depth < self.params.max_depth {
            if let Some(split) = find_best_split(self.data, &rows, self.grad, &self.features, self.params) {
                let col = &self.data.cols[split.feature];
                let (left, right): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&r| match col[r] {
                    Some(v) => v < split.threshold,
                    None => split.default_goes_left,
                });
                return TreeNode::Split {
                    feature: self.names[split.feature].clone(),
                    index: split.feature,
                    threshold: split.threshold,
                    default_goes_left: split.default_goes_left,
                    left: Box::new(self.grow(left, depth + 1)),
                    right: Box::new(self.grow(right, depth + 1)),
                };
            }
        }
        let g: f64 = rows.iter().map(|&r| self.grad[r]).sum();
        let h = rows.len() as f64;
        TreeNode::Leaf {
            value: -g / (h + self.params.l2_lambda) * self.params.learning_rate,
        }
    }
}

/// Features used by tree `tree_index`: `ceil(colsample * n)` drawn without
/// replacement, returned in feature order.
pub fn sample_features(n_features: usize, params: &GbtParams, tree_index: usize) -> Vec<usize> {
    if n_features == 0 {
        return Vec::new();
    }
    let k = ((params.colsample * n_features as f64).ceil() as usize).clamp(1, n_features);
    let mut rng = seeding::stream(params.seed, &format!("colsample:{tree_index}"));
    let mut picked = index::sample(&mut rng, n_features, k).into_vec();
    picked.sort_unstable();
    picked
}

fn check_inputs(x: &[Vec<Option<f64>>], y: &[f64], names: &[String]) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Training("empty training input".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} rows but {} targets", x.len(), y.len())));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Training(format!("target {i} is not finite")));
    }
    if let Some(i) = x.iter().position(|r| r.len() != names.len()) {
        return Err(Error::Training(format!("row {i} does not match the feature list")));
    }
    Ok(())
}

/// Fits a boosted ensemble to `(x, y)`.
pub fn fit(x: &[Vec<Option<f64>>], y: &[f64], names: &[String], params: &GbtParams) -> Result<GbtModel> {
    params.validate()?;
    check_inputs(x, y, names)?;
    let data = Columns::new(x, names.len());
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let mut pred = vec![base; y.len()];
    let mut grad = vec![0.0; y.len()];
    let mut trees = Vec::with_capacity(params.n_trees);
    for t in 0..params.n_trees {
        for i in 0..y.len() {
            grad[i] = pred[i] - y[i];
        }
        let grower = Grower {
            data: &data,
            grad: &grad,
            features: sample_features(names.len(), params, t),
            names,
            params,
        };
        let tree = grower.grow((0..y.len()).collect(), 0);
        for (p, row) in pred.iter_mut().zip(x) {
            *p += tree.eval(row);
        }
        trees.push(tree);
    }
    Ok(GbtModel {
        base_prediction: base,
        feature_list: names.to_vec(),
        params: params.clone(),
        trees,
    })
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    let se: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    (se / pred.len() as f64).sqrt()
}

pub fn mae(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_rmse: Vec<f64>,
    pub fold_mae: Vec<f64>,
    pub mean_rmse: f64,
    pub mean_mae: f64,
}

/// Seeded fold index per row: a shuffle of the rows dealt round-robin.
pub fn fold_assignment(n: usize, n_folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeding::stream(seed, "cv-folds"));
    let mut fold = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        fold[row] = pos % n_folds;
    }
    fold
}

/// K-fold cross-validated RMSE and MAE.
pub fn cv_rmse(
    x: &[Vec<Option<f64>>],
    y: &[f64],
    names: &[String],
    n_folds: usize,
    params: &GbtParams,
    seed: u64,
) -> Result<CvResult> {
    check_inputs(x, y, names)?;
    if n_folds < 2 {
        return Err(Error::Config("n_folds must be >= 2".into()));
    }
    if x.len() < n_folds {
        return Err(Error::Training(format!("{} rows for {n_folds} folds", x.len())));
    }
    let fold = fold_assignment(x.len(), n_folds, seed);
    let run = |k: usize| -> Result<(f64, f64)> {
        let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for i in 0..x.len() {
            if fold[i] == k {
                vx.push(x[i].clone());
                vy.push(y[i]);
            } else {
                tx.push(x[i].clone());
                ty.push(y[i]);
            }
        }
        if vx.is_empty() || tx.is_empty() {
            return Err(Error::Training(format!("fold {k} has no records")));
        }
        let model = fit(&tx, &ty, names, params)?;
        let pred = model.predict_all(&vx)?;
        Ok((rmse(&pred, &vy), mae(&pred, &vy)))
    };

    #[cfg(feature = "parallel")]
    let folds: Vec<Result<(f64, f64)>> = (0..n_folds).into_par_iter().map(run).collect();
    #[cfg(not(feature = "parallel"))]
    let folds: Vec<Result<(f64, f64)>> = (0..n_folds).map(run).collect();

    let folds = folds.into_iter().collect::<Result<Vec<_>>>()?;
    let fold_rmse: Vec<f64> = folds.iter().map(|f| f.0).collect();
    let fold_mae: Vec<f64> = folds.iter().map(|f| f.1).collect();
    Ok(CvResult {
        mean_rmse: fold_rmse.iter().sum::<f64>() / n_folds as f64,
        mean_mae: fold_mae.iter().sum::<f64>() / n_folds as f64,
        fold_rmse,
        fold_mae,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_index: usize,
    pub params: GbtParams,
    pub cv: Vec<CvResult>,
}

impl TuneResult {
    pub fn best_cv(&self) -> &CvResult {
        &self.cv[self.best_index]
    }
}

/// Grid search by mean CV RMSE; ties keep the earlier grid entry. All
/// entries share one fold assignment.
pub fn tune(
    x: &[Vec<Option<f64>>],
    y: &[f64],
    names: &[String],
    grid: &[GbtParams],
    n_folds: usize,
    seed: u64,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let cv = grid
        .iter()
        .map(|p| cv_rmse(x, y, names, n_folds, p, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut best_index = 0;
    for (i, r) in cv.iter().enumerate() {
        if r.mean_rmse < cv[best_index].mean_rmse {
            best_index = i;
        }
    }
    Ok(TuneResult {
        best_index,
        params: grid[best_index].clone(),
        cv,
    })
}
