//! Welch's unequal-variance t-test with a self-contained Student-t CDF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function (Lanczos approximation), `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1 - x) = pi / sin(pi x)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const CF_MAX_ITER: usize = 500;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)` for `a, b > 0`, `x` in `[0, 1]`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student-t CDF with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * inc_beta(df / 2.0, 0.5, df / (df + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided p-value `P(|T| >= |t|)`.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub statistic: f64,
    pub df: f64,
    pub p_two_sided: f64,
    /// Bonferroni correction for three tests, capped at 1.
    pub p_bonferroni: f64,
}

pub const BONFERRONI_TESTS: f64 = 3.0;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "samples of size {} and {}; need at least 2 each",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateSample("non-finite observation".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if !(va > 0.0) || !(vb > 0.0) {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let statistic = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let p = student_t_two_sided(statistic, df);
    Ok(WelchResult {
        statistic,
        df,
        p_two_sided: p,
        p_bonferroni: (BONFERRONI_TESTS * p).min(1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_abs_diff_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-13);
        assert_abs_diff_eq!(ln_gamma(10.0), 362_880f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn t_cdf_reference_points() {
        // df = 1 is Cauchy: F(t) = 1/2 + atan(t)/pi
        for t in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let expected = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert_abs_diff_eq!(student_t_cdf(t, 1.0), expected, epsilon = 1e-12);
        }
        // df = 2: F(t) = 1/2 + t / (2 sqrt(2 + t^2))
        for t in [-2.0f64, 0.3, 5.0] {
            let expected = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
            assert_abs_diff_eq!(student_t_cdf(t, 2.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 4.0, 2.5, 8.0];
        let r = welch_ttest(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_abs_diff_eq!(r.p_two_sided, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn antisymmetric() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let ab = welch_ttest(&a, &b).unwrap();
        let ba = welch_ttest(&b, &a).unwrap();
        assert_eq!(ab.statistic, -ba.statistic);
        assert_eq!(ab.df, ba.df);
        assert_abs_diff_eq!(ab.p_two_sided, ba.p_two_sided, epsilon = 1e-15);
    }

    #[test]
    fn equal_variance_equal_n_matches_pooled() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [3.0, 4.0, 5.0, 6.0, 7.0];
        let r = welch_ttest(&a, &b).unwrap();
        // Pooled t with identical variances.
        let pooled_t = (3.0 - 5.0) / (2.5f64 * (2.0 / 5.0)).sqrt();
        assert_abs_diff_eq!(r.statistic, pooled_t, epsilon = 1e-12);
        assert_abs_diff_eq!(r.df, 8.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_ttest(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
