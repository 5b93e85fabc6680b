//! Noncentral chi-square CDF and (truncated) inverse moments, all as Poisson
//! mixtures over central laws.

use statrs::function::gamma::{gamma_lr, ln_gamma};


use crate::error::{Error, Result};
use crate::special::{chisq_cdf, chisq_pdf};

const POISSON_TAIL: f64 = 1e-14;
const QUAD_TOL: f64 = 1e-12;

/// Poisson(lambda) probabilities from the mode outward until both tails are
/// below `POISSON_TAIL`. Returns the first index and the weights.
pub(crate) fn poisson_weights(lambda: f64) -> (usize, Vec<f64>) {
    if lambda == 0.0 {
        return (0, vec![1.0]);
    }
    let mode = lambda.floor() as usize;
    // relative weights by recurrence from the mode, normalised at the end
    let mut up = vec![1.0];
    let mut k = mode;
    loop {
        let w = up[up.len() - 1] * lambda / (k + 1) as f64;
        k += 1;
        up.push(w);
        let r = lambda / (k + 1) as f64;
        // geometric bound on what remains above k
        if r < 1.0 && w * r / (1.0 - r) < POISSON_TAIL * 1e-2 {
            break;
        }
    }
    let mut down: Vec<f64> = Vec::new();
    let mut k = mode;
    let mut w = 1.0;
    while k > 0 {
        w *= k as f64 / lambda;
        k -= 1;
        down.push(w);
        let r = k as f64 / lambda;
        if r == 0.0 || w * r / (1.0 - r) < POISSON_TAIL * 1e-2 {
            break;
        }
    }
    let start = mode - down.len();
    down.reverse();
    down.extend(up);
    let total: f64 = down.iter().sum();
    for v in &mut down {
        *v /= total;
    }
    (start, down)
}

fn check_delta(delta: f64) -> Result<()> {
    if !delta.is_finite() || delta < 0.0 {
        return Err(Error::domain(format!("noncentrality must be a finite nonnegative number, got {delta}")));
    }
    Ok(())
}

/// `P(chi2_v(delta) <= x)`.
pub fn noncentral_chisq_cdf(x: f64, v: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if v == 0 {
        return Err(Error::domain("noncentral chi-square needs v >= 1"));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let (start, w) = poisson_weights(delta / 2.0);
    let s: f64 = w
        .iter()
        .enumerate()
        .map(|(i, wi)| wi * chisq_cdf(x, (v + 2 * (start + i)) as f64))
        .sum();
    Ok(s.clamp(0.0, 1.0))
}

/// Density of the noncentral chi-square.
pub fn noncentral_chisq_pdf(x: f64, v: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let (start, w) = poisson_weights(delta / 2.0);
    Ok(w.iter()
        .enumerate()
        .map(|(i, wi)| wi * chisq_pdf(x, (v + 2 * (start + i)) as f64))
        .sum())
}

fn check_moment(v: usize, j: usize) -> Result<()> {
    if v <= 2 * j {
        return Err(Error::DivergentMoment { dof: v, j, needed: 2 * j });
    }
    Ok(())
}

/// `E[chi2_m^{-j}] = 2^{-j} Gamma(m/2 - j) / Gamma(m/2)` for the central law.
fn central_inv_moment(m: f64, j: usize) -> f64 {
    let mut r = 1.0;
    for i in 1..=j {
        r /= m - 2.0 * i as f64;
    }
    r
}

/// `E[(chi2_v(delta))^{-j}]`, written `E[chi_v^{-2j}]` in the risk formulas.
pub fn inv_moment(v: usize, delta: f64, j: usize) -> Result<f64> {
    check_delta(delta)?;
    check_moment(v, j)?;
    let (start, w) = poisson_weights(delta / 2.0);
    Ok(w.iter()
        .enumerate()
        .map(|(i, wi)| wi * central_inv_moment((v + 2 * (start + i)) as f64, j))
        .sum())
}

/// `E[(chi2_v(delta))^{-j} I(chi2_v(delta) < cutoff)]` by adaptive
/// Gauss-Kronrod quadrature of the mixture density, after the substitution
/// `x = cutoff * u^2` that removes the endpoint singularity.
pub fn truncated_inv_moment(v: usize, delta: f64, j: usize, cutoff: f64) -> Result<f64> {
    check_delta(delta)?;
    if j > 2 {
        return Err(Error::domain(format!("truncated inverse moment supports j in {{0,1,2}}, got {j}")));
    }
    if j >= 1 {
        check_moment(v, j)?;
    }
    if v == 0 {
        return Err(Error::domain("noncentral chi-square needs v >= 1"));
    }
    if cutoff.is_nan() || cutoff < 0.0 {
        return Err(Error::domain(format!("cutoff must be nonnegative, got {cutoff}")));
    }
    if cutoff == 0.0 {
        return Ok(0.0);
    }
    if j == 0 {
        return noncentral_chisq_cdf(cutoff, v, delta);
    }
    let (start, w) = poisson_weights(delta / 2.0);
    let jf = j as f64;
    // integrand in u: x^{-j} f(x) dx/du with x = c u^2, dx = 2 c u du;
    // each central term is u^{m - 1 - 2j} times a smooth factor.
    let ln_c = cutoff.ln();
    let terms: Vec<(f64, f64)> = w
        .iter()
        .enumerate()
        .map(|(i, wi)| {
            let m = (v + 2 * (start + i)) as f64;
            let h = m / 2.0;
            let ln_k = wi.ln() + std::f64::consts::LN_2 + (h - jf) * ln_c
                - h * std::f64::consts::LN_2
                - ln_gamma(h);
            (m, ln_k)
        })
        .collect();
    let f = |u: f64| -> f64 {
        if u <= 0.0 {
            return terms
                .iter()
                .filter(|(m, _)| (*m - 1.0 - 2.0 * jf) == 0.0)
                .map(|(_, lk)| lk.exp())
                .sum();
        }
        let x = cutoff * u * u;
        let lu = u.ln();
        terms
            .iter()
            .map(|(m, lk)| (lk + (m - 1.0 - 2.0 * jf) * lu - x / 2.0).exp())
            .sum()
    };
    Ok(adaptive_gauss_kronrod(&f, 0.0, 1.0, QUAD_TOL))
}

/// Closed form of the truncated moment through the regularized incomplete
/// gamma: `sum_k w_k 2^{-j} Gamma(m/2 - j)/Gamma(m/2) P(m/2 - j, c/2)`.
pub fn truncated_inv_moment_series(v: usize, delta: f64, j: usize, cutoff: f64) -> Result<f64> {
    check_delta(delta)?;
    check_moment(v, j)?;
    if cutoff <= 0.0 {
        return Ok(0.0);
    }
    let (start, w) = poisson_weights(delta / 2.0);
    Ok(w.iter()
        .enumerate()
        .map(|(i, wi)| {
            let m = (v + 2 * (start + i)) as f64;
            wi * central_inv_moment(m, j) * gamma_lr(m / 2.0 - j as f64, cutoff / 2.0)
        })
        .sum())
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive 15-point Gauss-Kronrod on `[a, b]` to an absolute
/// tolerance.
pub(crate) fn adaptive_gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let (v, e) = gk15(f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    for _ in 0..2000 {
        let total_err: f64 = pieces.iter().map(|p| p.3).sum();
        if total_err <= tol {
            break;
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
    }
    // sum in a fixed order for reproducibility
    pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
    pieces.iter().map(|p| p.2).sum()
}
