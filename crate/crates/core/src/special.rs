//! Scalar distribution helpers: standard normal, central chi-square CDF and
//! quantile, Student t tail probabilities.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF through the incomplete gamma, `Phi(x) = 1 - Q(1/2, x^2/2) / 2`
/// for `x > 0`. Accurate to a few ulps in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 {
        return 0.5;
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let q = 0.5 * gamma_ur(0.5, 0.5 * x * x);
    if x < 0.0 {
        q
    } else {
        1.0 - q
    }
}

pub fn normal_quantile(p: f64) -> f64 {
    let x = std_normal().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    // one Newton step against the incomplete-gamma CDF
    let d = normal_pdf(x);
    if d > 0.0 {
        x - (normal_cdf(x) - p) / d
    } else {
        x
    }
}

/// `P(chi2_v <= x)` as the regularized lower incomplete gamma `P(v/2, x/2)`.
/// `v` may be any positive real.
pub fn chisq_cdf(x: f64, v: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    gamma_lr(v / 2.0, x / 2.0)
}

/// Density of the central chi-square with `v` degrees of freedom.
pub fn chisq_pdf(x: f64, v: f64) -> f64 {
    if x <= 0.0 {
        return if x == 0.0 && v == 2.0 { 0.5 } else { 0.0 };
    }
    let h = v / 2.0;
    ((h - 1.0) * x.ln() - x / 2.0 - h * std::f64::consts::LN_2 - ln_gamma(h)).exp()
}

/// Upper-`alpha` critical value: the `x` with `P(chi2_v <= x) = 1 - alpha`.
///
/// Bracket by doubling, then bisection on the CDF until the bracket is below
/// a few ulps.
pub fn chisq_critical_value(v: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("test level must lie in (0,1), got {alpha}")));
    }
    if v == 0 {
        return Err(Error::domain("chi-square needs at least one degree of freedom"));
    }
    chisq_quantile(1.0 - alpha, v as f64)
}

/// Inverse CDF of the central chi-square by bracketed bisection.
pub fn chisq_quantile(p: f64, v: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("probability must lie in (0,1), got {p}")));
    }
    let mut lo = 0.0;
    let mut hi = v.max(1.0);
    while chisq_cdf(hi, v) < p {
        lo = hi;
        hi *= 2.0;
        if hi > 1e8 {
            return Err(Error::Degenerate("chi-square quantile bracket overflow".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chisq_cdf(mid, v) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided p-value of a Student t statistic.
pub fn student_t_two_sided(t: f64, dof: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, dof).expect("valid t dof");
    (2.0 * dist.cdf(-t.abs())).min(1.0)
}
