//! Elastic-net penalised quantile regression paths.
//!
//! The check loss is replaced by a Huber-smoothed version whose quadratic zone
//! has half-width `gamma`; it differs from `rho_tau` by at most `gamma / 4` per
//! observation. Each lambda is an exact convex QP solved by the interior-point
//! method: the lasso part enters as one pseudo-observation per penalised
//! column (`x = 2 lambda alpha e_j`, `y = 0`, level 1/2) and the ridge part as a
//! diagonal quadratic term. Coefficients whose pseudo-observation has an
//! interior dual value are set to exactly zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{empirical_quantile, PartitionedDesign};
use crate::error::{Error, Result};

use super::ipm::{self, IpmProblem};
use super::SolverOptions;

/// Coefficient path over a decreasing lambda grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyPath {
    pub alpha_mix: f64,
    pub lambdas: Vec<f64>,
    /// One coefficient vector per lambda.
    pub betas: Vec<Vec<f64>>,
    /// Unsmoothed training objective `sum rho_tau(r_i)` per lambda.
    pub losses: Vec<f64>,
    pub iterations: Vec<usize>,
    /// Smoothing half-width actually used.
    pub smoothing: f64,
    pub penalized: Vec<usize>,
}

impl PenaltyPath {
    pub fn beta(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.betas[k])
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }
}

/// Smoothed check loss and its derivative.
#[derive(Debug, Clone, Copy)]
struct Smoothed {
    tau: f64,
    gamma: f64,
}

impl Smoothed {
    #[inline]
    fn value(&self, u: f64) -> f64 {
        ipm::row_loss(u, self.tau, self.gamma)
    }

    #[inline]
    fn deriv(&self, u: f64) -> f64 {
        0.5 * (u / self.gamma).clamp(-1.0, 1.0) + (self.tau - 0.5)
    }
}

/// Default smoothing half-width: `1e-4 * IQR(y)`.
pub fn default_smoothing(y: &DVector<f64>) -> f64 {
    let v: Vec<f64> = y.iter().cloned().collect();
    let q1 = empirical_quantile(&v, 0.25).unwrap_or(0.0);
    let q3 = empirical_quantile(&v, 0.75).unwrap_or(0.0);
    let iqr = q3 - q1;
    if iqr > 0.0 {
        1e-4 * iqr
    } else {
        1e-4 * (1.0 + y.amax())
    }
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    loss: Smoothed,
    penalized: Vec<bool>,
    alpha: f64,
}

impl Problem<'_> {
    #[cfg_attr(not(test), allow(dead_code))]
    fn objective(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let r = self.y - self.x * beta;
        let mut f: f64 = r.iter().map(|&u| self.loss.value(u)).sum();
        for (j, &pen) in self.penalized.iter().enumerate() {
            if pen {
                f += lambda * (self.alpha * beta[j].abs() + 0.5 * (1.0 - self.alpha) * beta[j] * beta[j]);
            }
        }
        f
    }

    /// Gradient of the smoothed loss, `-X' psi(r)`.
    fn loss_gradient(&self, r: &DVector<f64>) -> DVector<f64> {
        let psi = r.map(|u| self.loss.deriv(u));
        -self.x.tr_mul(&psi)
    }

    /// Largest violation of the subgradient optimality conditions, divided by `n`.
    #[cfg_attr(not(test), allow(dead_code))]
    fn kkt_violation(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let r = self.y - self.x * beta;
        let g = self.loss_gradient(&r);
        let mut worst = 0.0f64;
        for j in 0..beta.len() {
            let v = if !self.penalized[j] {
                g[j].abs()
            } else {
                let gj = g[j] + lambda * (1.0 - self.alpha) * beta[j];
                if beta[j] != 0.0 {
                    (gj + lambda * self.alpha * beta[j].signum()).abs()
                } else {
                    (gj.abs() - lambda * self.alpha).max(0.0)
                }
            };
            worst = worst.max(v);
        }
        worst / self.x.nrows() as f64
    }

    fn solve(&self, lambda: f64, options: &SolverOptions) -> Result<(DVector<f64>, usize)> {
        let (n, p) = self.x.shape();
        let l1 = lambda * self.alpha;
        let l2 = lambda * (1.0 - self.alpha);
        let pseudo: Vec<usize> = if l1 > 0.0 {
            (0..p).filter(|&j| self.penalized[j]).collect()
        } else {
            Vec::new()
        };
        let m = n + pseudo.len();
        let mut xa: DMatrix<f64> = DMatrix::zeros(m, p);
        xa.rows_mut(0, n).copy_from(self.x);
        for (k, &j) in pseudo.iter().enumerate() {
            xa[(n + k, j)] = 2.0 * l1;
        }
        let mut ya: DVector<f64> = DVector::zeros(m);
        ya.rows_mut(0, n).copy_from(self.y);
        let tau = DVector::from_fn(m, |i, _| if i < n { self.loss.tau } else { 0.5 });
        let smooth = DVector::from_fn(m, |i, _| if i < n { 2.0 * self.loss.gamma } else { 0.0 });
        let ridge = DVector::from_fn(p, |j, _| if self.penalized[j] { l2 } else { 0.0 });
        let prob = IpmProblem { x: &xa, y: &ya, tau, smooth, ridge };
        // coefficient error scales like the square root of the complementarity gap
        let out = ipm::solve_problem(&prob, options.tolerance * 1e-3, options.max_iterations)?;
        let mut beta = out.beta;
        let scale = 1e-4 * (1.0 + beta.amax());
        // tiny coefficients whose zero satisfies the subgradient condition are
        // set to exact zeros
        let tiny: Vec<usize> = pseudo.iter().cloned().filter(|&j| beta[j].abs() <= scale).collect();
        if !tiny.is_empty() {
            let mut trial = beta.clone();
            for &j in &tiny {
                trial[j] = 0.0;
            }
            let g = self.loss_gradient(&(self.y - self.x * &trial));
            let slack = 1e-7 * n as f64;
            for &j in &tiny {
                if g[j].abs() <= l1 + slack {
                    beta[j] = 0.0;
                }
            }
        }
        Ok((beta, out.iterations))
    }
}

fn penalized_mask(design: &PartitionedDesign) -> Vec<bool> {
    let icpt = design.intercept_columns();
    (0..design.p()).map(|j| !icpt.contains(&j)).collect()
}

/// Smoothed fit with every penalised coefficient held at zero.
fn null_fit(prob: &Problem<'_>, options: &SolverOptions) -> Result<DVector<f64>> {
    let free: Vec<usize> = (0..prob.x.ncols()).filter(|&j| !prob.penalized[j]).collect();
    let mut beta = DVector::zeros(prob.x.ncols());
    if free.is_empty() {
        return Ok(beta);
    }
    let xs = prob.x.select_columns(&free);
    let sub = Problem {
        x: &xs,
        y: prob.y,
        loss: prob.loss,
        penalized: vec![false; free.len()],
        alpha: prob.alpha,
    };
    let (b, _) = sub.solve(0.0, options)?;
    for (k, &j) in free.iter().enumerate() {
        beta[j] = b[k];
    }
    Ok(beta)
}

/// Default grid: `count` log-spaced values from `lambda_max` (smallest lambda
/// zeroing every penalised coefficient) down to `ratio * lambda_max`.
pub fn default_lambda_grid(
    design: &PartitionedDesign,
    alpha_mix: f64,
    count: usize,
    ratio: f64,
    options: &SolverOptions,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::domain("lambda grid needs at least one value"));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain(format!("lambda ratio must lie in (0,1), got {ratio}")));
    }
    let lmax = lambda_max(design, alpha_mix, options)?;
    if count == 1 {
        return Ok(vec![lmax]);
    }
    let (hi, lo) = (lmax.ln(), (lmax * ratio).ln());
    Ok((0..count)
        .map(|k| (hi + (lo - hi) * k as f64 / (count - 1) as f64).exp())
        .collect())
}

fn make_problem<'a>(design: &'a PartitionedDesign, alpha_mix: f64, options: &SolverOptions) -> Problem<'a> {
    let gamma = options.smoothing.unwrap_or_else(|| default_smoothing(design.y()));
    Problem {
        x: design.x(),
        y: design.y(),
        loss: Smoothed { tau: design.tau(), gamma },
        penalized: penalized_mask(design),
        alpha: alpha_mix,
    }
}

/// Smallest lambda at which all penalised coefficients are zero. For ridge
/// (`alpha_mix = 0`) the lasso share is floored at `1e-3` so the value is finite.
pub fn lambda_max(design: &PartitionedDesign, alpha_mix: f64, options: &SolverOptions) -> Result<f64> {
    check_alpha(alpha_mix)?;
    options.validate()?;
    let prob = make_problem(design, alpha_mix, options);
    if !prob.penalized.iter().any(|&p| p) {
        return Err(Error::domain("no penalised columns in design"));
    }
    let b0 = null_fit(&prob, options)?;
    let g = prob.loss_gradient(&(design.y() - design.x() * &b0));
    let gmax = (0..design.p()).filter(|&j| prob.penalized[j]).map(|j| g[j].abs()).fold(0.0, f64::max);
    if gmax <= 0.0 {
        return Err(Error::Degenerate("null model already satisfies optimality; lambda_max is zero".into()));
    }
    // nudged off the boundary, where the all-zero solution is not unique
    Ok(gmax / alpha_mix.max(1e-3) * (1.0 + 1e-6))
}

fn check_alpha(alpha_mix: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha_mix) {
        Ok(())
    } else {
        Err(Error::domain(format!("elastic-net mixing must lie in [0,1], got {alpha_mix}")))
    }
}

/// Fits the penalised path over `lambdas` (strictly decreasing, nonnegative).
/// Constant columns are treated as intercepts and never penalised.
pub fn fit_penalized(
    design: &PartitionedDesign,
    alpha_mix: f64,
    lambdas: &[f64],
    options: &SolverOptions,
) -> Result<PenaltyPath> {
    check_alpha(alpha_mix)?;
    options.validate()?;
    if lambdas.is_empty() {
        return Err(Error::domain("empty lambda grid"));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Error::domain("lambdas must be finite and nonnegative"));
    }
    if lambdas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::domain("lambda grid must be strictly decreasing"));
    }
    let prob = make_problem(design, alpha_mix, options);
    let loss = design.loss();
    let mut path = PenaltyPath {
        alpha_mix,
        lambdas: lambdas.to_vec(),
        betas: Vec::with_capacity(lambdas.len()),
        losses: Vec::with_capacity(lambdas.len()),
        iterations: Vec::with_capacity(lambdas.len()),
        smoothing: prob.loss.gamma,
        penalized: (0..design.p()).filter(|&j| prob.penalized[j]).collect(),
    };
    for &lambda in lambdas {
        let (b, it) = prob.solve(lambda, options).map_err(|e| e.at(format!("lambda = {lambda:e}")))?;
        path.losses.push(loss.total(design.residuals(&b).iter()));
        path.betas.push(b.iter().cloned().collect());
        path.iterations.push(it);
    }
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::fit_full;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, p: usize, tau: f64, seed: u64) -> PartitionedDesign {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p + 1, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let y = DVector::from_fn(n, |i, _| {
            let mut v = 0.5 + rng.random_range(-1.0..1.0);
            for j in 1..=p.min(2) {
                v += 1.5 * j as f64 * x[(i, j)];
            }
            v
        });
        PartitionedDesign::new(x, y, tau, 1, p).unwrap()
    }

    #[test]
    fn smoothed_loss_is_close_to_check_loss() {
        let s = Smoothed { tau: 0.3, gamma: 0.01 };
        for k in -200..=200 {
            let u = k as f64 * 0.001;
            let rho = if u < 0.0 { (0.3 - 1.0) * u } else { 0.3 * u };
            let diff = s.value(u) - rho;
            assert!((-0.01 / 4.0 - 1e-15..=0.0).contains(&diff), "u={u} diff={diff}");
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let s = Smoothed { tau: 0.7, gamma: 0.5 };
        for k in -40..=40 {
            let u = k as f64 * 0.05 + 0.013;
            let h = 1e-6;
            let fd = (s.value(u + h) - s.value(u - h)) / (2.0 * h);
            assert!((fd - s.deriv(u)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_penalty_matches_unpenalised_fit() {
        for seed in 0..5 {
            // response scaled so the default smoothing is below 1e-4
            let raw = toy(61, 4, 0.4, seed);
            let d = raw.with_response(raw.y() / 5.0).unwrap();
            let opts = SolverOptions::default();
            let full = fit_full(&d, &opts).unwrap();
            for alpha in [0.0, 0.5, 1.0] {
                let path = fit_penalized(&d, alpha, &[0.0], &opts).unwrap();
                assert!(path.smoothing <= 1e-4);
                let diff = (path.beta(0) - full.beta_vec()).amax();
                assert!(diff <= 1e-4, "seed {seed} alpha {alpha} diff {diff}");
            }
        }
    }

    #[test]
    fn zero_penalty_gap_scales_with_smoothing() {
        let d = toy(61, 4, 0.4, 3);
        let full = fit_full(&d, &SolverOptions::default()).unwrap();
        for gamma in [1e-3, 1e-4, 1e-5, 1e-6] {
            let opts = SolverOptions { smoothing: Some(gamma), ..SolverOptions::default() };
            let path = fit_penalized(&d, 1.0, &[0.0], &opts).unwrap();
            let diff = (path.beta(0) - full.beta_vec()).amax();
            assert!(diff <= 5.0 * gamma, "gamma {gamma} diff {diff}");
        }
    }

    #[test]
    fn huge_penalty_leaves_intercept_at_sample_quantile() {
        let d = toy(51, 3, 0.5, 7);
        let opts = SolverOptions::default();
        let lmax = lambda_max(&d, 1.0, &opts).unwrap();
        let path = fit_penalized(&d, 1.0, &[10.0 * lmax, lmax * 1.0001], &opts).unwrap();
        let yv: Vec<f64> = d.y().iter().cloned().collect();
        let med = empirical_quantile(&yv, 0.5).unwrap();
        for k in 0..2 {
            let b = path.beta(k);
            for j in 1..d.p() {
                assert_eq!(b[j], 0.0, "k={k} j={j} {}", b[j]);
            }
            assert!((b[0] - med).abs() < 1e-3, "{} vs {med}", b[0]);
        }
        // just below lambda_max something enters
        let below = fit_penalized(&d, 1.0, &[0.9 * lmax], &opts).unwrap();
        assert!((1..d.p()).any(|j| below.beta(0)[j] != 0.0));
    }

    #[test]
    fn ridge_matches_grid_search() {
        // intercept plus one slope; zoomed grid search on the exact smoothed objective
        let d = toy(41, 1, 0.3, 11);
        let opts = SolverOptions { smoothing: Some(0.05), ..SolverOptions::default() };
        let prob = make_problem(&d, 0.0, &opts);
        for lambda in [0.5, 5.0, 50.0] {
            let path = fit_penalized(&d, 0.0, &[lambda], &opts).unwrap();
            let got = path.beta(0);
            let (mut c0, mut c1, mut h) = (0.0, 0.0, 4.0);
            for _ in 0..40 {
                let mut best = (f64::INFINITY, c0, c1);
                for i in -5..=5 {
                    for k in -5..=5 {
                        let b = DVector::from_vec(vec![c0 + h * i as f64 / 5.0, c1 + h * k as f64 / 5.0]);
                        let f = prob.objective(&b, lambda);
                        if f < best.0 {
                            best = (f, b[0], b[1]);
                        }
                    }
                }
                c0 = best.1;
                c1 = best.2;
                h *= 0.5;
            }
            assert!((got[0] - c0).abs() < 1e-3 && (got[1] - c1).abs() < 1e-3, "lambda {lambda}: {got:?} vs ({c0},{c1})");
        }
    }

    #[test]
    fn lasso_path_produces_exact_zeros_and_monotone_loss() {
        let d = toy(80, 8, 0.5, 3);
        let opts = SolverOptions::default();
        let grid = default_lambda_grid(&d, 1.0, 25, 1e-3, &opts).unwrap();
        let path = fit_penalized(&d, 1.0, &grid, &opts).unwrap();
        let nz: Vec<usize> = (0..path.len()).map(|k| path.betas[k][1..].iter().filter(|&&b| b != 0.0).count()).collect();
        assert_eq!(nz[0], 0);
        assert!(nz.iter().any(|&c| c > 0 && c < 8), "{nz:?}");
        let slack = d.n() as f64 * path.smoothing / 4.0 + 1e-7;
        for w in path.losses.windows(2) {
            assert!(w[1] <= w[0] + slack, "{w:?}");
        }
    }

    #[test]
    fn kkt_conditions_hold() {
        let d = toy(70, 5, 0.25, 5);
        let opts = SolverOptions { smoothing: Some(0.01), ..SolverOptions::default() };
        for alpha in [0.0, 0.3, 1.0] {
            let grid = default_lambda_grid(&d, alpha, 8, 1e-2, &opts).unwrap();
            let path = fit_penalized(&d, alpha, &grid, &opts).unwrap();
            let prob = make_problem(&d, alpha, &opts);
            for (k, &lam) in grid.iter().enumerate().take(path.len()) {
                let v = prob.kkt_violation(&path.beta(k), lam);
                assert!(v < 1e-6, "alpha {alpha} k {k} violation {v} beta {:?} g {:?}", path.betas[k], prob.loss_gradient(&d.residuals(&path.beta(k))).as_slice());
            }
        }
    }

    #[test]
    fn rejects_bad_grids() {
        let d = toy(20, 2, 0.5, 1);
        let opts = SolverOptions::default();
        assert!(fit_penalized(&d, 0.5, &[], &opts).is_err());
        assert!(fit_penalized(&d, 0.5, &[1.0, 2.0], &opts).is_err());
        assert!(fit_penalized(&d, 0.5, &[-1.0], &opts).is_err());
        assert!(fit_penalized(&d, 1.5, &[1.0], &opts).is_err());
    }
}
