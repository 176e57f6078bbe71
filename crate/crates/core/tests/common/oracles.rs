//! Brute-force references shared by the core tests and the acceptance suite.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use treatrank_core::counterfactual::Aggregation;
use treatrank_core::model::{Dataset, FeatureKind, PatientRecord};

/// Independent similarity: sample-sd standardization recomputed from scratch.
pub struct SimilarityOracle {
    kinds: Vec<FeatureKind>,
    sd: Vec<f64>,
}

impl SimilarityOracle {
    pub fn new(train: &Dataset) -> Self {
        let space = train.study().feature_space();
        let sd = (0..space.len())
            .map(|j| {
                let v: Vec<f64> = train.records().iter().filter_map(|r| r.features[j]).collect();
                if v.len() < 2 {
                    return 1.0;
                }
                let m = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        SimilarityOracle {
            kinds: space.features.iter().map(|f| f.kind).collect(),
            sd,
        }
    }

    pub fn sim(&self, x: &PatientRecord, u: &PatientRecord) -> f64 {
        let mut num = vec![];
        let mut cat = vec![];
        for j in 0..self.kinds.len() {
            if let (Some(a), Some(b)) = (x.features[j], u.features[j]) {
                if self.kinds[j] == FeatureKind::Categorical {
                    cat.push(if a == b { 0.0 } else { 1.0 });
                } else {
                    num.push(((a - b) / self.sd[j]).powi(2));
                }
            }
        }
        if num.is_empty() && cat.is_empty() {
            return 0.0;
        }
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        1.0 / (1.0 + mean(&num) + mean(&cat))
    }

    pub fn cell(&self, x: &PatientRecord, arm: &str, train: &Dataset, k: usize, agg: Aggregation) -> f64 {
        let mut pool: Vec<(f64, &str, f64)> = train
            .records()
            .iter()
            .filter(|u| u.arm_assigned == arm && u.id != x.id)
            .map(|u| (self.sim(x, u), u.id.as_str(), u.q_baseline - u.q_final.unwrap()))
            .collect();
        pool.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        pool.truncate(k);
        let ws: f64 = pool.iter().map(|p| p.0 * p.2).sum();
        let s: f64 = pool.iter().map(|p| p.0).sum();
        match agg {
            Aggregation::PaperLiteral => ws / pool.len() as f64,
            Aggregation::Normalized if s > 0.0 => ws / s,
            Aggregation::Normalized => pool.iter().map(|p| p.2).sum::<f64>() / pool.len() as f64,
        }
    }
}

#[derive(Debug, PartialEq)]
pub struct Best {
    pub feature: usize,
    pub threshold: f64,
    pub default_left: bool,
}

fn gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let (g, h) = (gl + gr, hl + hr);
    0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - g * g / (h + lambda))
}

/// Enumerates every (feature, midpoint, default side) and scans all rows for
/// each, keeping the first strict maximum.
pub fn exhaustive_root_split(x: &[Vec<Option<f64>>], y: &[f64], lambda: f64, mlw: f64) -> Option<Best> {
    let base = y.iter().sum::<f64>() / y.len() as f64;
    let grad: Vec<f64> = y.iter().map(|v| base - v).collect();
    let mut best: Option<(Best, f64)> = None;
    for f in 0..x[0].len() {
        let mut vals: Vec<f64> = x.iter().filter_map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = (w[0] + w[1]) / 2.0;
            for default_left in [true, false] {
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for (row, g) in x.iter().zip(&grad) {
                    let left = row[f].map_or(default_left, |v| v < t);
                    if left {
                        gl += g;
                        hl += 1.0;
                    } else {
                        gr += g;
                        hr += 1.0;
                    }
                }
                if hl < mlw || hr < mlw {
                    continue;
                }
                let g = gain(gl, hl, gr, hr, lambda);
                if g > 0.0 && best.as_ref().is_none_or(|(_, bg)| g > *bg) {
                    best = Some((
                        Best {
                            feature: f,
                            threshold: t,
                            default_left,
                        },
                        g,
                    ));
                }
            }
        }
    }
    best.map(|(b, _)| b)
}

/// Integer features on a small range (so ties and duplicates happen),
/// about 20% missing, and integer targets whose mean is an integer so every
/// gradient sum is exact and tie-breaking is well defined.
pub fn split_instance(rng: &mut ChaCha8Rng) -> (Vec<Vec<Option<f64>>>, Vec<f64>) {
    let n = rng.random_range(2..=20);
    let nf = rng.random_range(1..=3);
    let x: Vec<Vec<Option<f64>>> = (0..n)
        .map(|_| {
            (0..nf)
                .map(|_| (!rng.random_bool(0.2)).then(|| rng.random_range(-3..=3) as f64))
                .collect()
        })
        .collect();
    let mut y: Vec<f64> = (0..n).map(|_| rng.random_range(-10..=10) as f64).collect();
    let s: f64 = y.iter().sum();
    y[n - 1] -= s.rem_euclid(n as f64);
    (x, y)
}
