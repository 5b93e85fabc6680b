//! Full-model, sub-model and penalised quantile regression fits, plus an
//! exhaustive oracle for small problems.

mod brute;
mod ipm;
mod penalized;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use brute::{brute_force_fit, MAX_N as BRUTE_FORCE_MAX_N, MAX_P as BRUTE_FORCE_MAX_P};
pub use penalized::{default_lambda_grid, default_smoothing, fit_penalized, lambda_max, PenaltyPath};

use crate::design::{PartitionedDesign, QuantileFit};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative duality gap (complementarity for penalised fits).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Half-width of the quadratic zone of the smoothed loss used by
    /// penalised fits. `None` selects `1e-4 * IQR(y)`.
    pub smoothing: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iterations: 500,
            smoothing: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::domain("solver tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be at least 1"));
        }
        if let Some(s) = self.smoothing {
            if !(s > 0.0) {
                return Err(Error::domain("smoothing must be positive"));
            }
        }
        Ok(())
    }
}

/// Minimises `sum rho_tau(y_i - x_i' beta)` over all `p` coefficients.
///
/// When the optimum is a unique vertex the interior-point iterate is snapped
/// onto it, so at least `p` residuals are exactly zero. On an optimal face the
/// interior-point limit is reported.
pub fn fit_full(design: &PartitionedDesign, options: &SolverOptions) -> Result<QuantileFit> {
    options.validate()?;
    let out = ipm::solve(design.x(), design.y(), design.tau(), options.tolerance, options.max_iterations)?;
    let beta = ipm::polish_vertex(design.x(), design.y(), design.tau(), &out.beta).unwrap_or(out.beta);
    Ok(QuantileFit::from_beta(design, beta, out.iterations))
}

/// Restricted fit with `beta_2 = 0`: minimises over the first `p1`
/// coefficients and pads the result with `p2` exact zeros.
pub fn fit_submodel(design: &PartitionedDesign, options: &SolverOptions) -> Result<QuantileFit> {
    if design.p2() == 0 {
        return Err(Error::domain("sub-model needs p2 >= 1: nothing to restrict"));
    }
    let sub = design.submodel()?;
    let fit = fit_full(&sub, options)?;
    let mut beta = fit.beta.clone();
    beta.resize(design.p(), 0.0);
    Ok(QuantileFit::from_beta(design, DVector::from_vec(beta), fit.iterations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::empirical_quantile;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn three_point_instance() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 4.0]);
        let d = PartitionedDesign::new(x, y, 0.5, 1, 1).unwrap();
        let fit = fit_full(&d, &SolverOptions::default()).unwrap();
        assert!((fit.beta[0]).abs() < 1e-10, "{:?}", fit.beta);
        assert!((fit.beta[1] - 2.0).abs() < 1e-10);
        assert!((fit.objective - 0.5).abs() < 1e-10);
    }

    #[test]
    fn exact_fit_recovers_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(30, 3, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let b0 = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let y = &x * &b0;
        for tau in [0.1, 0.5, 0.9] {
            let d = PartitionedDesign::new(x.clone(), y.clone(), tau, 2, 1).unwrap();
            let fit = fit_full(&d, &SolverOptions::default()).unwrap();
            for j in 0..3 {
                assert!((fit.beta[j] - b0[j]).abs() < 1e-9);
            }
            assert!(fit.objective < 1e-9);
        }
    }

    #[test]
    fn intercept_only_is_sample_quantile() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..20).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = PartitionedDesign::new(DMatrix::from_element(20, 1, 1.0), DVector::from_vec(y.clone()), 0.25, 1, 0)
            .unwrap();
        let fit = fit_full(&d, &SolverOptions::default()).unwrap();
        let q = empirical_quantile(&y, 0.25).unwrap();
        // n tau = 5 is an integer: every point of [y_(5), y_(6)] is optimal
        let mut sorted = y.clone();
        sorted.sort_by(f64::total_cmp);
        assert!(fit.beta[0] >= sorted[4] - 1e-9 && fit.beta[0] <= sorted[5] + 1e-9);
        let at_q: f64 = y.iter().map(|v| crate::design::quantile_loss(v - q, 0.25).unwrap()).sum();
        assert!((fit.objective - at_q).abs() < 1e-9 * (1.0 + at_q));

        let y: Vec<f64> = (0..21).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = PartitionedDesign::new(DMatrix::from_element(21, 1, 1.0), DVector::from_vec(y.clone()), 0.25, 1, 0)
            .unwrap();
        let fit = fit_full(&d, &SolverOptions::default()).unwrap();
        let q = empirical_quantile(&y, 0.25).unwrap();
        assert!((fit.beta[0] - q).abs() < 1e-10, "{} vs {q}", fit.beta[0]);
    }

    #[test]
    fn submodel_pads_zeros_and_rejects_p2_zero() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 4.0, 2.0]);
        let d = PartitionedDesign::new(x.clone(), y.clone(), 0.5, 1, 1).unwrap();
        let sm = fit_submodel(&d, &SolverOptions::default()).unwrap();
        assert_eq!(sm.beta[1], 0.0);
        let d0 = PartitionedDesign::new(x, y, 0.5, 2, 0).unwrap();
        assert!(matches!(fit_submodel(&d0, &SolverOptions::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn vertex_interpolates_p_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(40, 4, |_, j| if j == 0 { 1.0 } else { StandardNormal.sample(&mut rng) });
        let y = DVector::from_fn(40, |_, _| StandardNormal.sample(&mut rng));
        let d = PartitionedDesign::new(x, y, 0.3, 2, 2).unwrap();
        let fit = fit_full(&d, &SolverOptions::default()).unwrap();
        let zeros = fit.residuals.iter().filter(|r| r.abs() < 1e-8).count();
        assert!(zeros >= 4);
    }

    #[test]
    fn bad_options_rejected() {
        let o = SolverOptions { tolerance: 0.0, ..Default::default() };
        assert!(o.validate().is_err());
        let o = SolverOptions { max_iterations: 0, ..Default::default() };
        assert!(o.validate().is_err());
    }
}
