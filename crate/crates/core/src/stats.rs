//! Student-t distribution and the two-sample Welch test used to screen
//! complaint types.
//!
//! Transcendental functions come from `libm` so that p-values, and every
//! artifact derived from them, are identical across platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const CF_TOLERANCE: f64 = 1e-12;
const CF_MAX_ITERATIONS: usize = 300;
const TINY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("degrees of freedom must be positive, got {0}")]
    InvalidDegreesOfFreedom(f64),
    #[error("degenerate sample: {0}")]
    DegenerateSample(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITERATIONS {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / clamp(1.0 + aa * d);
        c = clamp(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < CF_TOLERANCE {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`. `one_minus_x` is passed
/// separately so callers can supply it without cancellation.
fn regularized_beta(a: f64, b: f64, x: f64, one_minus_x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if one_minus_x <= 0.0 {
        return 1.0;
    }
    let ln_front =
        libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log(one_minus_x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, one_minus_x) / b
    }
}

fn check_args(t: f64, df: f64) -> Result<(), StatsError> {
    if !t.is_finite() || !df.is_finite() {
        return Err(StatsError::NonFiniteInput);
    }
    if df <= 0.0 {
        return Err(StatsError::InvalidDegreesOfFreedom(df));
    }
    Ok(())
}

/// `P(|T| >= |t|)` for Student-t with `df` degrees of freedom.
pub fn t_two_sided_tail(t: f64, df: f64) -> Result<f64, StatsError> {
    check_args(t, df)?;
    let t2 = t * t;
    let x = df / (df + t2);
    let one_minus_x = t2 / (df + t2);
    Ok(regularized_beta(0.5 * df, 0.5, x, one_minus_x).clamp(0.0, 1.0))
}

/// Cumulative distribution function of Student-t.
pub fn t_cdf(t: f64, df: f64) -> Result<f64, StatsError> {
    let half_tail = 0.5 * t_two_sided_tail(t, df)?;
    Ok(if t >= 0.0 { 1.0 - half_tail } else { half_tail })
}

fn mean_and_variance(sample: &[f64]) -> (f64, f64) {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let ss: f64 = sample.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Two-sided Welch (unequal variance) t-test of `post` against `pre`.
/// The statistic is positive when `post` has the larger mean.
pub fn welch_t_test(pre: &[f64], post: &[f64], alpha: f64) -> Result<TTestResult, StatsError> {
    if pre.len() < 2 || post.len() < 2 {
        return Err(StatsError::DegenerateSample("each sample needs at least two values"));
    }
    if pre.iter().chain(post).any(|v| !v.is_finite()) || !alpha.is_finite() {
        return Err(StatsError::NonFiniteInput);
    }
    let (mean_pre, var_pre) = mean_and_variance(pre);
    let (mean_post, var_post) = mean_and_variance(post);
    let se_pre = var_pre / pre.len() as f64;
    let se_post = var_post / post.len() as f64;
    let se2 = se_pre + se_post;
    if se2 <= 0.0 {
        return Err(StatsError::DegenerateSample("both samples have zero variance"));
    }
    let t = (mean_post - mean_pre) / se2.sqrt();
    let df = se2 * se2 / (se_pre * se_pre / (pre.len() as f64 - 1.0) + se_post * se_post / (post.len() as f64 - 1.0));
    let p = t_two_sided_tail(t, df)?;
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        alpha,
        significant: p < alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Reference values from scipy.stats.t.cdf.
    const SCIPY_CDF: [(f64, f64, f64); 7] = [
        (1.0, 1.0, 0.7500000000000002),
        (10.0, 1.812, 0.9499623689670764),
        (30.0, 2.457, 0.9899939672187431),
        (2.5, -0.7, 0.2717024715947741),
        (7.0, 3.2, 0.9924670943287554),
        (100.0, 1.96, 0.9736105493168852),
        (0.5, 4.0, 0.8403899585056642),
    ];

    #[test]
    fn cdf_matches_reference_values() {
        for (df, t, expected) in SCIPY_CDF {
            let got = t_cdf(t, df).unwrap();
            assert!((got - expected).abs() < 1e-10, "df={df} t={t}: {got} vs {expected}");
        }
    }

    #[test]
    fn cdf_at_zero_is_half() {
        for df in [0.3, 1.0, 2.0, 17.0, 1e4] {
            assert_eq!(t_cdf(0.0, df).unwrap(), 0.5);
        }
    }

    #[test]
    fn cauchy_closed_form() {
        for t in [-30.0, -2.0, -0.3, 0.0, 0.5, 1.0, 7.5] {
            let exact = 0.5 + f64::atan(t) / std::f64::consts::PI;
            assert!((t_cdf(t, 1.0).unwrap() - exact).abs() < 1e-10);
        }
    }

    #[test]
    fn invalid_arguments() {
        assert_eq!(t_cdf(f64::NAN, 3.0), Err(StatsError::NonFiniteInput));
        assert_eq!(t_cdf(f64::INFINITY, 3.0), Err(StatsError::NonFiniteInput));
        assert!(matches!(t_cdf(1.0, 0.0), Err(StatsError::InvalidDegreesOfFreedom(_))));
    }

    #[test]
    fn welch_reference_fixture() {
        // scipy.stats.ttest_ind(post, pre, equal_var=False)
        let r = welch_t_test(&[10.0, 12.0, 11.0, 13.0], &[20.0, 22.0, 21.0, 23.0], 0.05).unwrap();
        assert!((r.t_statistic - 10.954451150103322).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 6.0).abs() < 1e-12);
        assert!((r.p_value - 3.436402807612147e-05).abs() < 1e-12);
        assert!(r.p_value < 0.001 && r.significant);

        let r = welch_t_test(&[3.0, 9.0, 7.0, 12.0, 10.0, 15.0], &[1.0, 4.0, 2.0, 8.0, 5.0], 0.05).unwrap();
        assert!((r.t_statistic + 2.558772084028805).abs() < 1e-12);
        assert!((r.degrees_of_freedom - 8.655217412226945).abs() < 1e-10);
        assert!((r.p_value - 0.03168523128811631).abs() < 1e-12);
    }

    #[test]
    fn welch_identical_samples() {
        let s = [3.0, 5.0, 4.0, 8.0];
        let r = welch_t_test(&s, &s, 0.05).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn welch_degenerate_samples() {
        assert!(matches!(
            welch_t_test(&[5.0, 5.0, 5.0], &[5.0, 5.0, 5.0], 0.05),
            Err(StatsError::DegenerateSample(_))
        ));
        assert!(matches!(
            welch_t_test(&[1.0], &[5.0, 6.0], 0.05),
            Err(StatsError::DegenerateSample(_))
        ));
        // one constant side is still testable
        assert!(welch_t_test(&[5.0, 5.0, 5.0], &[4.0, 6.0, 9.0], 0.05).is_ok());
    }

    proptest! {
        #[test]
        fn cdf_symmetric_and_monotone(t in -50.0f64..50.0, dt in 0.0f64..5.0, df in 0.2f64..200.0) {
            let lo = t_cdf(t, df).unwrap();
            let hi = t_cdf(t + dt, df).unwrap();
            prop_assert!(lo <= hi + 1e-15);
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!((lo + t_cdf(-t, df).unwrap() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn welch_swap_and_scale_invariance(
            pre in prop::collection::vec(0.0f64..100.0, 2..30),
            post in prop::collection::vec(0.0f64..100.0, 2..30),
            scale in 0.01f64..100.0,
        ) {
            let Ok(r) = welch_t_test(&pre, &post, 0.05) else { return Ok(()); };
            let swapped = welch_t_test(&post, &pre, 0.05).unwrap();
            prop_assert!((r.t_statistic + swapped.t_statistic).abs() < 1e-10 * (1.0 + r.t_statistic.abs()));
            prop_assert!((r.p_value - swapped.p_value).abs() < 1e-12);

            let sp: Vec<f64> = pre.iter().map(|v| v * scale).collect();
            let sq: Vec<f64> = post.iter().map(|v| v * scale).collect();
            let scaled = welch_t_test(&sp, &sq, 0.05).unwrap();
            prop_assert!((r.t_statistic - scaled.t_statistic).abs() < 1e-10 * (1.0 + r.t_statistic.abs()));
            prop_assert!((r.degrees_of_freedom - scaled.degrees_of_freedom).abs() < 1e-10 * r.degrees_of_freedom);
            prop_assert!((r.p_value - scaled.p_value).abs() < 1e-10);
            prop_assert!(r.significant == (r.p_value < 0.05));
        }
    }
}
