//! Design-limit partitions, sparsity estimation and the Wald test of
//! `beta_2 = 0`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::design::{PartitionedDesign, QuantileFit};
use crate::error::{Error, Result};
use crate::linalg::{self, spd_inverse};
use crate::special::{chisq_critical_value, normal_pdf, normal_quantile};

/// `D = X'X / n` and its blocks under the `(p1, p2)` split.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPartitions {
    pub p1: usize,
    pub p2: usize,
    pub d: DMatrix<f64>,
    pub d11: DMatrix<f64>,
    pub d12: DMatrix<f64>,
    pub d21: DMatrix<f64>,
    pub d22: DMatrix<f64>,
    /// `D11 - D12 D22^{-1} D21`
    pub d11_2: DMatrix<f64>,
    /// `D22 - D21 D11^{-1} D12`
    pub d22_1: DMatrix<f64>,
    /// `D^{22} = (D22 - D21 D11^{-1} D12)^{-1}`, the (2,2) block of `D^{-1}`.
    pub d_sup22: DMatrix<f64>,
    pub d11_inv: DMatrix<f64>,
}

impl DesignPartitions {
    /// Builds every block from a symmetric positive-definite `d`.
    pub fn from_matrix(d: DMatrix<f64>, p1: usize, p2: usize) -> Result<Self> {
        let p = d.nrows();
        if d.ncols() != p || p1 + p2 != p {
            return Err(Error::domain(format!(
                "matrix of shape {:?} does not match split {p1} + {p2}",
                d.shape()
            )));
        }
        if p1 == 0 || p2 == 0 {
            return Err(Error::domain("partitions need p1 >= 1 and p2 >= 1"));
        }
        let asym = (&d - d.transpose()).amax();
        if asym > 1e-10 * d.amax().max(1.0) {
            return Err(Error::domain("D must be symmetric"));
        }
        if d.clone().cholesky().is_none() {
            return Err(Error::SingularDesign {
                columns: (0..p).collect(),
                detail: "D is not positive definite".into(),
            });
        }
        let d11 = d.view((0, 0), (p1, p1)).into_owned();
        let d12 = d.view((0, p1), (p1, p2)).into_owned();
        let d21 = d.view((p1, 0), (p2, p1)).into_owned();
        let d22 = d.view((p1, p1), (p2, p2)).into_owned();
        let d11_inv = spd_inverse(&d11, "D11")?;
        let d22_inv = spd_inverse(&d22, "D22")?;
        let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
        let d11_2 = sym(&d11 - &d12 * &d22_inv * &d21);
        let d22_1 = sym(&d22 - &d21 * &d11_inv * &d12);
        let d_sup22 = spd_inverse(&d22_1, "D22.1")?;
        spd_inverse(&d11_2, "D11.2")?;
        Ok(Self { p1, p2, d, d11, d12, d21, d22, d11_2, d22_1, d_sup22, d11_inv })
    }
}

/// `D = X'X / n` of the design, with all blocks and Schur complements.
pub fn compute_partitions(design: &PartitionedDesign) -> Result<DesignPartitions> {
    linalg::check_full_column_rank(design.x())?;
    let d = linalg::gram(design.x()) / design.n() as f64;
    let d = (&d + d.transpose()) * 0.5;
    DesignPartitions::from_matrix(d, design.p1(), design.p2())
}

/// Hall-Sheather bandwidth on the probability scale,
/// `n^{-1/3} z_{1-a/2}^{2/3} (1.5 phi(z_tau)^2 / (2 z_tau^2 + 1))^{1/3}`,
/// clamped into `(0, min(tau, 1 - tau) / 2]`.
pub fn hall_sheather_bandwidth(n: usize, tau: f64, alpha_level: f64) -> Result<f64> {
    if n < 10 {
        return Err(Error::InsufficientData(format!("bandwidth needs n >= 10, got {n}")));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::domain(format!("tau must lie in (0,1), got {tau}")));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::domain(format!("alpha must lie in (0,1), got {alpha_level}")));
    }
    let za = normal_quantile(1.0 - alpha_level / 2.0);
    let zt = normal_quantile(tau);
    let f = normal_pdf(zt);
    let h = (n as f64).powf(-1.0 / 3.0) * za.powf(2.0 / 3.0) * (1.5 * f * f / (2.0 * zt * zt + 1.0)).powf(1.0 / 3.0);
    Ok(h.min(tau.min(1.0 - tau) / 2.0))
}

/// Empirical quantile function with linear interpolation between order
/// statistics (order statistic `k` sits at probability `k / (n - 1)`).
fn interpolated_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Difference-quotient estimate of the sparsity `1 / f(F^{-1}(tau))` from
/// residuals, with the Hall-Sheather bandwidth at level 0.05.
///
/// Residuals that are zero up to `1e-9` of the largest one are the
/// observations interpolated by a quantile fit; they pile up at the `tau`
/// quantile and would shrink the estimate, so they are left out.
pub fn estimate_sparsity(residuals: &[f64], tau: f64, n: usize) -> Result<f64> {
    if residuals.len() != n {
        return Err(Error::domain(format!("expected {n} residuals, got {}", residuals.len())));
    }
    if n < 10 {
        return Err(Error::InsufficientData(format!("sparsity needs n >= 10, got {n}")));
    }
    let scale = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let mut r: Vec<f64> = residuals.iter().cloned().filter(|v| v.abs() > 1e-9 * scale).collect();
    if r.len() < 10 {
        return Err(Error::Degenerate("fewer than ten nonzero residuals; sparsity undefined".into()));
    }
    let h = hall_sheather_bandwidth(r.len(), tau, 0.05)?;
    r.sort_by(f64::total_cmp);
    let lo = (tau - h).max(f64::EPSILON);
    let hi = (tau + h).min(1.0 - f64::EPSILON);
    let s = (interpolated_quantile(&r, hi) - interpolated_quantile(&r, lo)) / (hi - lo);
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Degenerate("residual quantile function is flat; sparsity undefined".into()));
    }
    Ok(s)
}

/// `w = sqrt(tau (1 - tau)) * sparsity`.
pub fn scale_from_sparsity(tau: f64, sparsity: f64) -> f64 {
    (tau * (1.0 - tau)).sqrt() * sparsity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub statistic: f64,
    pub dof: usize,
    pub sparsity: f64,
    pub w: f64,
    pub alpha: f64,
    pub critical_value: f64,
    pub reject: bool,
}

impl WaldResult {
    /// Decision at another level, keeping the statistic.
    pub fn at_level(&self, alpha: f64) -> Result<WaldResult> {
        let critical_value = chisq_critical_value(self.dof, alpha)?;
        Ok(WaldResult {
            alpha,
            critical_value,
            reject: self.statistic >= critical_value,
            ..self.clone()
        })
    }
}

/// `W = n w^{-2} beta2' (D^{22})^{-1} beta2` with `beta2` the trailing `p2`
/// coefficients of `fit`, compared with the upper-`alpha` chi-square point
/// with `p2` degrees of freedom.
pub fn wald_statistic(
    fit: &QuantileFit,
    parts: &DesignPartitions,
    w: f64,
    tau: f64,
    n: usize,
    alpha: f64,
) -> Result<WaldResult> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(Error::domain(format!("scale w must be positive, got {w}")));
    }
    let (p1, p2) = (parts.p1, parts.p2);
    if fit.beta.len() != p1 + p2 {
        return Err(Error::domain(format!(
            "coefficient vector has length {} but partitions expect {}",
            fit.beta.len(),
            p1 + p2
        )));
    }
    let b2 = fit.beta2(p2);
    // (D^{22})^{-1} = D22.1
    let q = b2.dot(&(&parts.d22_1 * &b2));
    let statistic = (n as f64 * q / (w * w)).max(0.0);
    let critical_value = chisq_critical_value(p2, alpha)?;
    Ok(WaldResult {
        statistic,
        dof: p2,
        sparsity: w / (tau * (1.0 - tau)).sqrt(),
        w,
        alpha,
        critical_value,
        reject: statistic >= critical_value,
    })
}

/// Full pipeline: partitions of the design, sparsity from the full-model
/// residuals, then the Wald statistic.
pub fn wald_test(design: &PartitionedDesign, full_fit: &QuantileFit, alpha: f64) -> Result<WaldResult> {
    let parts = compute_partitions(design)?;
    let s = estimate_sparsity(&full_fit.residuals, design.tau(), design.n())?;
    let w = scale_from_sparsity(design.tau(), s);
    wald_statistic(full_fit, &parts, w, design.tau(), design.n(), alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::chisq_cdf;
    use nalgebra::DVector;

    fn fit_with_beta(beta: Vec<f64>) -> QuantileFit {
        QuantileFit { beta, objective: 0.0, residuals: vec![], iterations: 0, converged: true }
    }

    #[test]
    fn identity_blocks() {
        let p = DesignPartitions::from_matrix(DMatrix::identity(5, 5), 3, 2).unwrap();
        assert_eq!(p.d11_2, DMatrix::identity(3, 3));
        assert_eq!(p.d_sup22, DMatrix::identity(2, 2));
    }

    #[test]
    fn orthonormal_design_gives_identity() {
        // columns of a scaled Hadamard-like design: X'X = n I
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, 1.0, -1.0]);
        let d = PartitionedDesign::new(x, DVector::zeros(4), 0.5, 1, 1).unwrap();
        let parts = compute_partitions(&d).unwrap();
        assert!((&parts.d - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert!((parts.d_sup22[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_schur() {
        let r = 0.5;
        let p = DesignPartitions::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, r, r, 1.0]), 1, 1).unwrap();
        assert!((p.d22_1[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((p.d_sup22[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
        assert!((&p.d_sup22 * &p.d22_1 - DMatrix::identity(1, 1)).amax() < 1e-10);
    }

    #[test]
    fn d11_2_inverts_block_of_inverse() {
        let d = DMatrix::from_fn(5, 5, |i, j| 0.5f64.powi((i as i32 - j as i32).abs()));
        let p = DesignPartitions::from_matrix(d.clone(), 2, 3).unwrap();
        let dinv = d.try_inverse().unwrap();
        let blk11 = dinv.view((0, 0), (2, 2)).into_owned();
        let blk22 = dinv.view((2, 2), (3, 3)).into_owned();
        assert!((p.d11_2.clone().try_inverse().unwrap() - blk11).amax() < 1e-12);
        assert!((&p.d_sup22 - blk22).amax() < 1e-12);
        assert!((&p.d_sup22 * &p.d22_1 - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn not_positive_definite_rejected() {
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(DesignPartitions::from_matrix(d, 1, 1).is_err());
    }

    #[test]
    fn bandwidth_properties() {
        // non-increasing everywhere, strictly decreasing once the clamp is inactive
        let mut prev = f64::INFINITY;
        for n in [10, 20, 50, 100, 1000, 10_000] {
            let h = hall_sheather_bandwidth(n, 0.3, 0.05).unwrap();
            assert!(h <= prev && h > 0.0 && h <= 0.15);
            if n >= 1000 {
                assert!(h < prev);
            }
            prev = h;
        }
        let h = hall_sheather_bandwidth(100, 0.5, 0.05).unwrap();
        assert!(h > 0.0 && h <= 0.25);
        // independent evaluation: z_{0.975} = 1.959963984540054, z_{0.5} = 0, phi(0)^2 = 1/(2 pi)
        let za: f64 = 1.959963984540054;
        let expect = 1000f64.powf(-1.0 / 3.0) * za.powf(2.0 / 3.0) * (1.5 / (2.0 * std::f64::consts::PI)).powf(1.0 / 3.0);
        let h = hall_sheather_bandwidth(1000, 0.5, 0.05).unwrap();
        assert!((h - expect).abs() < 1e-10, "{h} {expect}");
        assert!(hall_sheather_bandwidth(9, 0.5, 0.05).is_err());
    }

    #[test]
    fn sparsity_of_uniform_order_statistics() {
        let n = 999;
        let r: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        for tau in [0.25, 0.5, 0.75] {
            let s = estimate_sparsity(&r, tau, n).unwrap();
            assert!((s - 1.0).abs() < 0.01, "{s}");
            let w = scale_from_sparsity(tau, s);
            assert!((w - (tau * (1.0 - tau)).sqrt()).abs() < 0.01);
        }
    }

    #[test]
    fn interpolated_zeros_are_ignored() {
        let r: Vec<f64> = (1..=200).map(|i| (i as f64 - 100.5) / 50.0).collect();
        let mut with_zeros = r.clone();
        with_zeros.extend([0.0; 9]);
        let a = estimate_sparsity(&r, 0.3, r.len()).unwrap();
        let b = estimate_sparsity(&with_zeros, 0.3, with_zeros.len()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sparsity_errors() {
        assert!(matches!(estimate_sparsity(&[0.0; 30], 0.5, 30), Err(Error::Degenerate(_))));
        assert!(matches!(estimate_sparsity(&[1.0; 5], 0.5, 5), Err(Error::InsufficientData(_))));
        assert!(matches!(estimate_sparsity(&[1.0; 20], 0.5, 20), Err(Error::Degenerate(_))));
    }

    #[test]
    fn wald_zero_block() {
        let parts = DesignPartitions::from_matrix(DMatrix::identity(4, 4), 2, 2).unwrap();
        let res = wald_statistic(&fit_with_beta(vec![1.0, 2.0, 0.0, 0.0]), &parts, 1.0, 0.5, 100, 0.5).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert!(!res.reject);
    }

    #[test]
    fn wald_scalar_collapse() {
        // D = ((1, .5), (.5, 1)) -> D^{22} = 4/3; n b^2 / (w^2 v) = 100 * .09 / (4/3) = 6.75
        let parts = DesignPartitions::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 1, 1).unwrap();
        let res = wald_statistic(&fit_with_beta(vec![0.7, 0.3]), &parts, 1.0, 0.5, 100, 0.05).unwrap();
        assert!((res.statistic - 6.75).abs() < 1e-12);
        assert!(res.reject);
        // doubling w quarters the statistic
        let res2 = wald_statistic(&fit_with_beta(vec![0.7, 0.3]), &parts, 2.0, 0.5, 100, 0.05).unwrap();
        assert!((res2.statistic * 4.0 - res.statistic).abs() < 1e-12);
        assert!(wald_statistic(&fit_with_beta(vec![0.7, 0.3]), &parts, 0.0, 0.5, 100, 0.05).is_err());
    }

    #[test]
    fn critical_value_is_exact_quantile() {
        let parts = DesignPartitions::from_matrix(DMatrix::identity(7, 7), 2, 5).unwrap();
        for alpha in [0.01, 0.05, 0.1, 0.25] {
            let r = wald_statistic(&fit_with_beta(vec![0.0; 7]), &parts, 1.0, 0.5, 10, alpha).unwrap();
            assert!((chisq_cdf(r.critical_value, 5.0) - (1.0 - alpha)).abs() < 1e-10);
        }
    }
}
