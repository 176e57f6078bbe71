use serde::Deserialize;
use treatrank_core::validate::welch::{student_t_two_sided, welch_ttest};

#[derive(Deserialize)]
struct Case {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    df: f64,
    p: f64,
}

#[derive(Deserialize)]
struct Oracle {
    cases: Vec<Case>,
}

fn cases() -> Vec<Case> {
    let text = include_str!("data/welch_oracle.json");
    serde_json::from_str::<Oracle>(text).unwrap().cases
}

#[test]
fn matches_reference_values() {
    let cases = cases();
    assert_eq!(cases.len(), 10);
    for (i, c) in cases.iter().enumerate() {
        let r = welch_ttest(&c.a, &c.b).unwrap();
        assert!(
            (r.statistic - c.t).abs() < 1e-6,
            "case {i}: t {} vs {}",
            r.statistic,
            c.t
        );
        assert!((r.df - c.df).abs() < 1e-6, "case {i}: df {} vs {}", r.df, c.df);
        assert!(
            (r.p_two_sided - c.p).abs() < 1e-6,
            "case {i}: p {} vs {}",
            r.p_two_sided,
            c.p
        );
        assert_eq!(r.p_bonferroni, (3.0 * r.p_two_sided).min(1.0));
    }
}

#[test]
fn small_p_values_keep_relative_precision() {
    for c in cases().iter().filter(|c| c.p < 1e-3) {
        let r = welch_ttest(&c.a, &c.b).unwrap();
        assert!(((r.p_two_sided - c.p) / c.p).abs() < 1e-8);
    }
}

#[test]
fn df_within_welch_bounds() {
    for c in cases() {
        let r = welch_ttest(&c.a, &c.b).unwrap();
        let lo = (c.a.len().min(c.b.len()) - 1) as f64;
        let hi = (c.a.len() + c.b.len() - 2) as f64;
        assert!(r.df >= lo - 1e-12 && r.df <= hi + 1e-12);
        assert!((0.0..=1.0).contains(&r.p_two_sided));
    }
}

#[test]
fn tail_is_monotone_in_t() {
    let mut last = 1.0;
    for i in 0..200 {
        let p = student_t_two_sided(i as f64 * 0.05, 7.3);
        assert!(p <= last);
        last = p;
    }
}
