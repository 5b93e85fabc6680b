//! Monte Carlo studies: correlated Gaussian designs, error laws, the
//! shrinkage-versus-penalty comparison and MRME sweeps over the size of the
//! violation of the sub-model restriction.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, LogNormal, SkewNormal, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::data::Scaling;
use crate::design::{ls_coefficients, PartitionedDesign};
use crate::error::{Error, Result, StageExt};
use crate::shrinkage::{estimate_all, Combination};
use crate::solver::{default_lambda_grid, fit_penalized, SolverOptions};

pub const DEFAULT_SKEW_SHAPE: f64 = 5.0;
pub const DEFAULT_PRETEST_LEVELS: [f64; 4] = [0.01, 0.05, 0.10, 0.25];
pub const DEFAULT_PENALTIES: [f64; 3] = [0.0, 1.0, 0.5];
const MRME_BOOTSTRAP: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    Chisq5,
    T2,
    Laplace,
    Lognormal,
    SkewNormal,
}

impl ErrorDist {
    pub const ALL: [ErrorDist; 6] = [
        ErrorDist::Normal,
        ErrorDist::Chisq5,
        ErrorDist::T2,
        ErrorDist::Laplace,
        ErrorDist::Lognormal,
        ErrorDist::SkewNormal,
    ];
}

/// Central value reported for per-replication metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Summary {
    #[default]
    Mean,
    Median,
}

fn default_rho() -> f64 {
    0.5
}
fn default_skew() -> f64 {
    DEFAULT_SKEW_SHAPE
}
fn default_levels() -> Vec<f64> {
    DEFAULT_PRETEST_LEVELS.to_vec()
}
fn default_penalties() -> Vec<f64> {
    DEFAULT_PENALTIES.to_vec()
}
fn default_lambda_count() -> usize {
    100
}
fn default_lambda_ratio() -> f64 {
    1e-3
}
fn default_wald_alpha() -> f64 {
    0.05
}

/// One simulation study. `p1` counts covariates in the retained block (the
/// intercept, when present, is added on top).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub sigma: f64,
    pub tau_levels: Vec<f64>,
    pub error_dist: ErrorDist,
    #[serde(default)]
    pub delta_star: f64,
    pub replications: usize,
    pub seed: u64,
    /// Train, validation and test sizes. The training size must equal `n`.
    #[serde(default)]
    pub split: Option<[usize; 3]>,
    /// Explicit coefficients. The nonzero entries form the retained block.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Adds an intercept column; covariates are then standardized on the
    /// training split.
    #[serde(default)]
    pub intercept: bool,
    #[serde(default = "default_skew")]
    pub skew_shape: f64,
    #[serde(default = "default_levels")]
    pub pretest_levels: Vec<f64>,
    /// Elastic-net mixing values of the penalized competitors. Absent means
    /// ridge, lasso and the 0.5 mix when there is a split, none otherwise.
    #[serde(default)]
    pub penalties: Option<Vec<f64>>,
    #[serde(default = "default_lambda_count")]
    pub lambda_count: usize,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_wald_alpha")]
    pub wald_alpha: f64,
    #[serde(default)]
    pub summary: Summary,
}

impl SimConfig {
    /// Bare configuration with the default estimator plan and no split.
    pub fn new(n: usize, p1: usize, p2: usize, sigma: f64, tau_levels: Vec<f64>, replications: usize, seed: u64) -> Self {
        Self {
            n,
            p1,
            p2,
            sigma,
            tau_levels,
            error_dist: ErrorDist::Normal,
            delta_star: 0.0,
            replications,
            seed,
            split: None,
            beta: None,
            rho: default_rho(),
            intercept: false,
            skew_shape: DEFAULT_SKEW_SHAPE,
            pretest_levels: default_levels(),
            penalties: None,
            lambda_count: default_lambda_count(),
            lambda_ratio: default_lambda_ratio(),
            wald_alpha: default_wald_alpha(),
            summary: Summary::Mean,
        }
    }

    /// First comparison example: eight covariates, three active, 50/50/200.
    pub fn example1(tau_levels: Vec<f64>, error_dist: ErrorDist, replications: usize, seed: u64) -> Self {
        Self::comparison(vec![3.0, 1.5, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0], tau_levels, error_dist, replications, seed)
    }

    /// Second comparison example: the first with ten more inactive covariates.
    pub fn example2(tau_levels: Vec<f64>, error_dist: ErrorDist, replications: usize, seed: u64) -> Self {
        let mut beta = vec![3.0, 1.5, 0.0, 0.0, 2.0];
        beta.extend(std::iter::repeat_n(0.0, 10));
        Self::comparison(beta, tau_levels, error_dist, replications, seed)
    }

    fn comparison(beta: Vec<f64>, tau_levels: Vec<f64>, error_dist: ErrorDist, replications: usize, seed: u64) -> Self {
        let active = beta.iter().filter(|&&b| b != 0.0).count();
        Self {
            error_dist,
            split: Some([50, 50, 200]),
            p2: beta.len() - active,
            beta: Some(beta),
            intercept: true,
            ..Self::new(50, active, 0, 3.0, tau_levels, replications, seed)
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: SimConfig = serde_json::from_str(text).map_err(|e| Error::Format(format!("simulation config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn p(&self) -> usize {
        self.p1 + self.p2
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::domain(format!("sigma must be finite and nonnegative, got {}", self.sigma)));
        }
        if self.tau_levels.is_empty() || self.tau_levels.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
            return Err(Error::domain("tau levels must be a nonempty list inside (0,1)"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(Error::domain(format!("|rho| must be below 1, got {}", self.rho)));
        }
        if self.p2 == 0 {
            return Err(Error::domain("p2 must be at least 1"));
        }
        if !(self.delta_star >= 0.0) {
            return Err(Error::domain("delta_star must be nonnegative"));
        }
        if let Some([a, b, c]) = self.split {
            if a == 0 || b == 0 || c == 0 {
                return Err(Error::domain("split counts must be positive"));
            }
            if a != self.n {
                return Err(Error::domain(format!("training split {a} differs from n = {}", self.n)));
            }
        } else if !self.penalty_list().is_empty() {
            return Err(Error::domain("penalized competitors need a validation split"));
        }
        if let Some(beta) = &self.beta {
            if beta.len() != self.p() {
                return Err(Error::domain(format!("beta has length {} but p1 + p2 = {}", beta.len(), self.p())));
            }
            let active = beta.iter().filter(|&&b| b != 0.0).count();
            if active > self.p1 {
                return Err(Error::domain(format!("beta has {active} nonzero entries but p1 = {}", self.p1)));
            }
        }
        let p_fit = self.p() + self.intercept as usize;
        if self.n <= p_fit {
            return Err(Error::InsufficientData(format!("n = {} must exceed the {p_fit} fitted coefficients", self.n)));
        }
        if self.pretest_levels.iter().any(|&a| !(a > 0.0 && a < 1.0)) || !(self.wald_alpha > 0.0 && self.wald_alpha < 1.0) {
            return Err(Error::domain("test levels must lie in (0,1)"));
        }
        if self.penalty_list().iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::domain("elastic-net mixing values must lie in [0,1]"));
        }
        if self.lambda_count == 0 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(Error::domain("lambda grid needs count >= 1 and ratio in (0,1)"));
        }
        if !(self.skew_shape.is_finite()) {
            return Err(Error::domain("skew shape must be finite"));
        }
        Ok(())
    }

    pub fn penalty_list(&self) -> Vec<f64> {
        match (&self.penalties, self.split) {
            (Some(v), _) => v.clone(),
            (None, Some(_)) => default_penalties(),
            (None, None) => Vec::new(),
        }
    }

    /// True coefficients: explicit `beta`, or the sweep coefficients.
    pub fn true_beta(&self) -> Vec<f64> {
        self.beta.clone().unwrap_or_else(|| make_coefficients(self.p1, self.p2, self.delta_star))
    }

    /// Covariate order placing the retained block first.
    fn column_order(&self) -> Vec<usize> {
        match &self.beta {
            Some(beta) => {
                let mut order: Vec<usize> = (0..beta.len()).filter(|&j| beta[j] != 0.0).collect();
                order.extend((0..beta.len()).filter(|&j| beta[j] == 0.0));
                order
            }
            None => (0..self.p()).collect(),
        }
    }
}

pub fn penalty_label(alpha_mix: f64) -> String {
    if alpha_mix == 0.0 {
        "Ridge".into()
    } else if alpha_mix == 1.0 {
        "Lasso".into()
    } else if alpha_mix == 0.5 {
        "ENET".into()
    } else {
        format!("ENET{alpha_mix}")
    }
}

/// `Sigma_jk = rho^|j-k|`.
pub fn ar_covariance(p: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| rho.powi((j as i32 - k as i32).abs()))
}

/// Rows are independent `N(0, Sigma)` with `Sigma_jk = rho^|j-k|`.
pub fn generate_design<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::domain(format!("AR correlation needs |rho| < 1, got {rho}")));
    }
    let l = ar_covariance(p, rho)
        .cholesky()
        .ok_or_else(|| Error::domain("covariance is not positive definite"))?
        .l();
    let z = DMatrix::from_fn(n, p, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    Ok(z * l.transpose())
}

pub fn sample_errors<R: Rng + ?Sized>(dist: ErrorDist, n: usize, rng: &mut R) -> Vec<f64> {
    sample_errors_shaped(dist, n, DEFAULT_SKEW_SHAPE, rng)
}

/// As [`sample_errors`] with an explicit skew-normal shape.
pub fn sample_errors_shaped<R: Rng + ?Sized>(dist: ErrorDist, n: usize, skew_shape: f64, rng: &mut R) -> Vec<f64> {
    match dist {
        ErrorDist::Normal => (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(rng);
                v
            })
            .collect(),
        ErrorDist::Chisq5 => {
            let d = ChiSquared::new(5.0).expect("valid dof");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        ErrorDist::T2 => {
            let d = StudentT::new(2.0).expect("valid dof");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        ErrorDist::Laplace => (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (1.0 - 2.0 * u.abs()).ln()
            })
            .collect(),
        ErrorDist::Lognormal => {
            let d = LogNormal::new(0.0, 1.0).expect("valid parameters");
            (0..n).map(|_| d.sample(rng)).collect()
        }
        ErrorDist::SkewNormal => {
            let d = SkewNormal::new(0.0, 1.0, skew_shape).expect("valid parameters");
            (0..n).map(|_| d.sample(rng)).collect()
        }
    }
}

/// `(1,...,1, 0,...,0)`, with the first zero replaced by `delta_star` when positive.
pub fn make_coefficients(p1: usize, p2: usize, delta_star: f64) -> Vec<f64> {
    let mut b = vec![1.0; p1];
    b.extend(std::iter::repeat_n(0.0, p2));
    if delta_star > 0.0 && p2 > 0 {
        b[p1] = delta_star;
    }
    b
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::domain(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Squared Euclidean distance.
pub fn model_error(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    check_len(beta_hat.len(), beta_true.len())?;
    Ok(beta_hat.iter().zip(beta_true).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean absolute coefficient error.
pub fn coefficient_mad(beta_hat: &[f64], beta_true: &[f64]) -> Result<f64> {
    check_len(beta_hat.len(), beta_true.len())?;
    if beta_hat.is_empty() {
        return Err(Error::domain("empty coefficient vector"));
    }
    Ok(beta_hat.iter().zip(beta_true).map(|(a, b)| (a - b).abs()).sum::<f64>() / beta_hat.len() as f64)
}

/// Mean absolute prediction error on a test set.
pub fn pmad(beta_hat: &DVector<f64>, x_test: &DMatrix<f64>, y_test: &DVector<f64>) -> Result<f64> {
    if x_test.ncols() != beta_hat.len() || x_test.nrows() != y_test.len() {
        return Err(Error::domain(format!(
            "shape mismatch: X is {}x{}, beta {}, y {}",
            x_test.nrows(),
            x_test.ncols(),
            beta_hat.len(),
            y_test.len()
        )));
    }
    if y_test.is_empty() {
        return Err(Error::domain("empty test set"));
    }
    let r = y_test - x_test * beta_hat;
    Ok(r.iter().map(|v| v.abs()).sum::<f64>() / y_test.len() as f64)
}

/// Grid span for a mixing weight; pure ridge shrinks slowly and needs a wider span.
fn grid_ratio(alpha_mix: f64, ratio: f64) -> f64 {
    if alpha_mix == 0.0 {
        ratio * 1e-3
    } else {
        ratio
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `median(ME_FM) / median(ME_*)`.
pub fn mrme(me_fm: &[f64], me_star: &[f64]) -> Result<f64> {
    if me_fm.is_empty() || me_fm.len() != me_star.len() {
        return Err(Error::domain(format!(
            "MRME needs equal nonzero replication counts, got {} and {}",
            me_fm.len(),
            me_star.len()
        )));
    }
    let den = median(me_star);
    if !(den > 0.0) {
        return Err(Error::Degenerate("median model error of the compared estimator is zero".into()));
    }
    Ok(median(me_fm) / den)
}

/// Bootstrap standard error of the MRME over replications.
fn mrme_se(me_fm: &[f64], me_star: &[f64], seed: u64) -> f64 {
    let n = me_fm.len();
    if n < 2 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut stats = Vec::with_capacity(MRME_BOOTSTRAP);
    for _ in 0..MRME_BOOTSTRAP {
        for i in 0..n {
            let k = rng.random_range(0..n);
            a[i] = me_fm[k];
            b[i] = me_star[k];
        }
        let d = median(&b);
        if d > 0.0 {
            stats.push(median(&a) / d);
        }
    }
    sd(&stats)
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ME")]
    Me,
    #[serde(rename = "MRME")]
    Mrme,
    /// Mean absolute coefficient error over the slopes.
    #[serde(rename = "MAD")]
    Mad,
    /// Mean absolute prediction error on the test split.
    #[serde(rename = "PMAD")]
    Pmad,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Me => "ME",
            Metric::Mrme => "MRME",
            Metric::Mad => "MAD",
            Metric::Pmad => "PMAD",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    /// `None` for rows not tied to a quantile level (the least-squares baseline).
    pub tau: Option<f64>,
    pub estimator: String,
    pub metric: Metric,
    pub value: f64,
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta_star: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricRow>,
}

impl MetricsTable {
    pub fn get(&self, tau: Option<f64>, estimator: &str, metric: Metric) -> Option<&MetricRow> {
        self.rows
            .iter()
            .find(|r| r.tau == tau && r.estimator == estimator && r.metric == metric && r.delta_star.is_none())
    }

    pub fn get_at(&self, delta_star: f64, tau: f64, estimator: &str, metric: Metric) -> Option<&MetricRow> {
        self.rows.iter().find(|r| {
            r.delta_star == Some(delta_star) && r.tau == Some(tau) && r.estimator == estimator && r.metric == metric
        })
    }

    fn has_delta(&self) -> bool {
        self.rows.iter().any(|r| r.delta_star.is_some())
    }

    pub fn to_csv_string(&self) -> String {
        let delta = self.has_delta();
        let mut s = String::new();
        if delta {
            s.push_str("delta_star,");
        }
        s.push_str("tau,estimator,metric,value,se\n");
        for r in &self.rows {
            if delta {
                let _ = write!(s, "{},", r.delta_star.map(|d| d.to_string()).unwrap_or_default());
            }
            let tau = r.tau.map(|t| t.to_string()).unwrap_or_else(|| "mean".into());
            let _ = writeln!(s, "{tau},{},{},{},{}", r.estimator, r.metric.label(), r.value, r.se);
        }
        s
    }

    /// Aligned plain-text table, `value (se)` to three decimals.
    pub fn to_table_string(&self) -> String {
        let delta = self.has_delta();
        let mut s = String::new();
        if delta {
            let _ = write!(s, "{:>8} ", "delta*");
        }
        let _ = writeln!(s, "{:>6} {:<9} {:<6} {:>18}", "tau", "estimator", "metric", "value (se)");
        for r in &self.rows {
            if delta {
                let _ = write!(s, "{:>8} ", r.delta_star.map(|d| format!("{d}")).unwrap_or_default());
            }
            let tau = r.tau.map(|t| format!("{t}")).unwrap_or_else(|| "mean".into());
            let cell = format!("{:.3}({:.3})", r.value, r.se);
            let _ = writeln!(s, "{tau:>6} {:<9} {:<6} {cell:>18}", r.estimator, r.metric.label());
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(Error::from)
    }
}

/// Per-replication metric values, indexed `[tau][estimator]`, plus the
/// least-squares baseline.
struct ReplicationOutcome {
    me: Vec<Vec<f64>>,
    mad: Vec<Vec<f64>>,
    pmad: Vec<Vec<f64>>,
    ols: [f64; 3],
}

/// Estimator plan shared by the simulation and the real-data study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorPlan {
    pub pretest_levels: Vec<f64>,
    pub penalties: Vec<f64>,
    pub lambda_count: usize,
    pub lambda_ratio: f64,
    pub wald_alpha: f64,
}

impl Default for EstimatorPlan {
    fn default() -> Self {
        Self {
            pretest_levels: default_levels(),
            penalties: default_penalties(),
            lambda_count: default_lambda_count(),
            lambda_ratio: default_lambda_ratio(),
            wald_alpha: default_wald_alpha(),
        }
    }
}

impl EstimatorPlan {
    pub fn labels(&self, p2: usize) -> Vec<String> {
        let mut v = vec!["FM".to_string(), "SM".to_string()];
        for k in 0..self.pretest_levels.len() {
            v.push(format!("PT{}", k + 1));
        }
        if p2 >= 3 {
            v.push("S".into());
            v.push("PS".into());
        }
        for &a in &self.penalties {
            v.push(penalty_label(a));
        }
        v
    }

    fn from_config(c: &SimConfig) -> Self {
        Self {
            pretest_levels: c.pretest_levels.clone(),
            penalties: c.penalty_list(),
            lambda_count: c.lambda_count,
            lambda_ratio: c.lambda_ratio,
            wald_alpha: c.wald_alpha,
        }
    }
}

/// How penalty levels are tuned.
pub enum Tuning<'a> {
    /// Pick the path point with the smallest PMAD on held-out data.
    Validation { x: &'a DMatrix<f64>, y: &'a DVector<f64> },
    /// Fit the path on the first `n_fit` training rows, pick lambda on the
    /// remaining rows, then refit on all rows with lambda rescaled by the
    /// ratio of sample sizes.
    InnerSplit { n_fit: usize },
}

/// Fits every estimator of `plan` on `design` (coefficients in the design's
/// own columns), in the order of [`EstimatorPlan::labels`].
pub fn fit_estimators(
    design: &PartitionedDesign,
    plan: &EstimatorPlan,
    tuning: Option<Tuning<'_>>,
    options: &SolverOptions,
) -> Result<Vec<DVector<f64>>> {
    let set = estimate_all(design, plan.wald_alpha, options)?;
    let mut out = vec![
        set.full_vector(Combination::Full)?,
        set.full_vector(Combination::Sub)?,
    ];
    for &a in &plan.pretest_levels {
        out.push(set.full_vector(Combination::Pretest { alpha: a })?);
    }
    if set.stein_available() {
        out.push(set.full_vector(Combination::Stein)?);
        out.push(set.full_vector(Combination::PositiveStein)?);
    }
    if plan.penalties.is_empty() {
        return Ok(out);
    }
    let fm = set.full_vector(Combination::Full)?;
    let tuning = tuning.ok_or_else(|| Error::domain("penalized competitors need a tuning rule"))?;
    for &alpha_mix in &plan.penalties {
        let label = penalty_label(alpha_mix);
        let b = tune_penalized(design, alpha_mix, plan, &tuning, &fm, options).stage(label)?;
        out.push(b);
    }
    Ok(out)
}

fn tune_penalized(
    design: &PartitionedDesign,
    alpha_mix: f64,
    plan: &EstimatorPlan,
    tuning: &Tuning<'_>,
    fm: &DVector<f64>,
    options: &SolverOptions,
) -> Result<DVector<f64>> {
    match tuning {
        Tuning::Validation { x, y } => {
            let ratio = grid_ratio(alpha_mix, plan.lambda_ratio);
            let grid = default_lambda_grid(design, alpha_mix, plan.lambda_count, ratio, options)?;
            let path = fit_penalized(design, alpha_mix, &grid, options)?;
            // the unpenalized end of the path is the exact full-model fit
            let mut best = (pmad(fm, x, y)?, fm.clone());
            for k in 0..path.len() {
                let b = path.beta(k);
                let v = pmad(&b, x, y)?;
                if v < best.0 {
                    best = (v, b);
                }
            }
            Ok(best.1)
        }
        Tuning::InnerSplit { n_fit } => {
            let n = design.n();
            if *n_fit <= design.p() || *n_fit >= n {
                return Err(Error::InsufficientData(format!("inner split of {n_fit} rows out of {n}")));
            }
            let rows: Vec<usize> = (0..*n_fit).collect();
            let rest: Vec<usize> = (*n_fit..n).collect();
            let inner = PartitionedDesign::new(
                design.x().select_rows(&rows),
                DVector::from_fn(*n_fit, |i, _| design.y()[i]),
                design.tau(),
                design.p1(),
                design.p2(),
            )?;
            let xv = design.x().select_rows(&rest);
            let yv = DVector::from_fn(rest.len(), |i, _| design.y()[rest[i]]);
            let ratio = grid_ratio(alpha_mix, plan.lambda_ratio);
            let grid = default_lambda_grid(&inner, alpha_mix, plan.lambda_count, ratio, options)?;
            let path = fit_penalized(&inner, alpha_mix, &grid, options)?;
            let inner_fm = crate::solver::fit_full(&inner, options)?.beta_vec();
            let mut best = (pmad(&inner_fm, &xv, &yv)?, 0.0);
            for (k, &lam) in grid.iter().enumerate().take(path.len()) {
                let v = pmad(&path.beta(k), &xv, &yv)?;
                if v < best.0 {
                    best = (v, lam);
                }
            }
            if best.1 == 0.0 {
                return Ok(fm.clone());
            }
            let lambda = best.1 * n as f64 / *n_fit as f64;
            Ok(fit_penalized(design, alpha_mix, &[lambda], options)?.beta(0))
        }
    }
}

/// Replication `rep` draws from the ChaCha8 stream `rep` of `seed`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Draws the full data block (train, then validation, then test rows).
fn draw_data(config: &SimConfig, beta: &[f64], rep: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let total = match config.split {
        Some([a, b, c]) => a + b + c,
        None => config.n,
    };
    let mut rng = replication_rng(config.seed, rep);
    let x = generate_design(total, config.p(), config.rho, &mut rng)?;
    let e = sample_errors_shaped(config.error_dist, total, config.skew_shape, &mut rng);
    let b = DVector::from_column_slice(beta);
    let y = &x * b + DVector::from_vec(e) * config.sigma;
    Ok((x, y))
}

pub(crate) fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

fn one_replication(config: &SimConfig, plan: &EstimatorPlan, rep: usize, options: &SolverOptions) -> Result<ReplicationOutcome> {
    let beta = config.true_beta();
    let p = config.p();
    let (x_all, y_all) = draw_data(config, &beta, rep).stage("data generation")?;
    let n = config.n;
    let order = config.column_order();
    let x_train_raw = x_all.rows(0, n).clone_owned();
    let y_train = y_all.rows(0, n).clone_owned();

    let (scaling, x_fit) = if config.intercept {
        let sc = Scaling::fit(&x_train_raw, None).stage("standardize")?;
        let z = sc.apply(&x_train_raw);
        (Some(sc), with_intercept(&z.select_columns(&order)))
    } else {
        (None, x_train_raw.select_columns(&order))
    };
    let off = config.intercept as usize;
    let p1_fit = config.p1 + off;

    // maps fitted coefficients to (intercept, raw-scale slopes in original order)
    let to_raw = |b: &DVector<f64>| -> (f64, Vec<f64>) {
        let mut slopes = vec![0.0; p];
        for (k, &j) in order.iter().enumerate() {
            slopes[j] = b[off + k];
        }
        match &scaling {
            Some(sc) => sc.back_transform(b[0], &slopes),
            None => (0.0, slopes),
        }
    };

    let split = config.split;
    let (x_val, y_val, x_test, y_test) = match split {
        Some([a, bv, c]) => (
            x_all.rows(a, bv).clone_owned(),
            y_all.rows(a, bv).clone_owned(),
            x_all.rows(a + bv, c).clone_owned(),
            y_all.rows(a + bv, c).clone_owned(),
        ),
        None => (DMatrix::zeros(0, p), DVector::zeros(0), DMatrix::zeros(0, p), DVector::zeros(0)),
    };
    // validation rows in the fitted coordinates
    let x_val_fit = match &scaling {
        Some(sc) => with_intercept(&sc.apply(&x_val).select_columns(&order)),
        None => x_val.select_columns(&order),
    };
    let x_test_raw = if config.intercept { with_intercept(&x_test) } else { x_test.clone() };
    let raw_vec = |icpt: f64, slopes: &[f64]| -> DVector<f64> {
        let mut v = Vec::with_capacity(p + off);
        if config.intercept {
            v.push(icpt);
        }
        v.extend_from_slice(slopes);
        DVector::from_vec(v)
    };

    let labels = plan.labels(config.p2);
    let mut me = Vec::with_capacity(config.tau_levels.len());
    let mut mad = Vec::with_capacity(config.tau_levels.len());
    let mut pm = Vec::with_capacity(config.tau_levels.len());
    for &tau in &config.tau_levels {
        let design = PartitionedDesign::new(x_fit.clone(), y_train.clone(), tau, p1_fit, config.p2)?;
        let tuning = split.map(|_| Tuning::Validation { x: &x_val_fit, y: &y_val });
        let fits = fit_estimators(&design, plan, tuning, options).stage(format!("tau = {tau}"))?;
        debug_assert_eq!(fits.len(), labels.len());
        let mut me_t = Vec::with_capacity(fits.len());
        let mut mad_t = Vec::with_capacity(fits.len());
        let mut pm_t = Vec::with_capacity(fits.len());
        for b in &fits {
            let (icpt, slopes) = to_raw(b);
            me_t.push(model_error(&slopes, &beta)?);
            mad_t.push(coefficient_mad(&slopes, &beta)?);
            pm_t.push(if split.is_some() { pmad(&raw_vec(icpt, &slopes), &x_test_raw, &y_test)? } else { f64::NAN });
        }
        me.push(me_t);
        mad.push(mad_t);
        pm.push(pm_t);
    }

    let x_ls = if config.intercept { with_intercept(&x_train_raw) } else { x_train_raw.clone() };
    let ls = ls_coefficients(&x_ls, &y_train).stage("least squares")?;
    let ls_slopes: Vec<f64> = ls.iter().skip(off).cloned().collect();
    let ols = [
        model_error(&ls_slopes, &beta)?,
        coefficient_mad(&ls_slopes, &beta)?,
        if split.is_some() { pmad(&ls, &x_test_raw, &y_test)? } else { f64::NAN },
    ];
    Ok(ReplicationOutcome { me, mad, pmad: pm, ols })
}

fn run_replications(config: &SimConfig, plan: &EstimatorPlan, options: &SolverOptions) -> Result<Vec<ReplicationOutcome>> {
    (0..config.replications)
        .into_par_iter()
        .map(|r| one_replication(config, plan, r, options).stage(format!("replication {r}")))
        .collect()
}

fn summarize(values: &[f64], summary: Summary) -> (f64, f64) {
    let se = sd(values) / (values.len() as f64).sqrt();
    match summary {
        Summary::Mean => (mean(values), se),
        // asymptotic standard error of a sample median under normality
        Summary::Median => (median(values), se * (std::f64::consts::PI / 2.0).sqrt()),
    }
}

/// Runs the comparison study: every estimator at every quantile level, plus
/// the least-squares baseline. Reports ME and MAD of the slopes and, with a
/// split, the test PMAD.
pub fn run_study(config: &SimConfig) -> Result<MetricsTable> {
    run_study_with(config, &SolverOptions::default())
}

pub fn run_study_with(config: &SimConfig, options: &SolverOptions) -> Result<MetricsTable> {
    config.validate()?;
    let plan = EstimatorPlan::from_config(config);
    let outcomes = run_replications(config, &plan, options)?;
    let labels = plan.labels(config.p2);
    let mut metrics = vec![Metric::Me, Metric::Mad];
    if config.split.is_some() {
        metrics.push(Metric::Pmad);
    }
    let mut table = MetricsTable::default();
    let mut buf = Vec::with_capacity(outcomes.len());
    for (t, &tau) in config.tau_levels.iter().enumerate() {
        for (e, label) in labels.iter().enumerate() {
            for &m in &metrics {
                buf.clear();
                buf.extend(outcomes.iter().map(|o| match m {
                    Metric::Me => o.me[t][e],
                    Metric::Mad => o.mad[t][e],
                    _ => o.pmad[t][e],
                }));
                let (value, se) = summarize(&buf, config.summary);
                table.rows.push(MetricRow { tau: Some(tau), estimator: label.clone(), metric: m, value, se, delta_star: None });
            }
        }
    }
    for &m in &metrics {
        let k = match m {
            Metric::Me => 0,
            Metric::Mad => 1,
            _ => 2,
        };
        buf.clear();
        buf.extend(outcomes.iter().map(|o| o.ols[k]));
        let (value, se) = summarize(&buf, config.summary);
        table.rows.push(MetricRow { tau: None, estimator: "OLS".into(), metric: m, value, se, delta_star: None });
    }
    Ok(table)
}

/// MRME of SM, the pretests, S and PS against FM at each `delta_star` of
/// `grid` (ascending, starting at 0). Penalized competitors are not part of
/// the sweep. Replication streams are shared across grid points.
pub fn mrme_sweep(base: &SimConfig, grid: &[f64]) -> Result<MetricsTable> {
    mrme_sweep_with(base, grid, &SolverOptions::default())
}

pub fn mrme_sweep_with(base: &SimConfig, grid: &[f64], options: &SolverOptions) -> Result<MetricsTable> {
    if grid.is_empty() || grid[0] != 0.0 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain("delta grid must be strictly ascending and start at 0"));
    }
    if base.beta.is_some() {
        return Err(Error::domain("sweep builds its own coefficients; drop `beta` from the config"));
    }
    let mut cfg = base.clone();
    cfg.penalties = Some(Vec::new());
    cfg.validate()?;
    let plan = EstimatorPlan::from_config(&cfg);
    let labels = plan.labels(cfg.p2);
    let mut table = MetricsTable::default();
    for (g, &ds) in grid.iter().enumerate() {
        cfg.delta_star = ds;
        let outcomes = run_replications(&cfg, &plan, options).stage(format!("delta* = {ds}"))?;
        for (t, &tau) in cfg.tau_levels.iter().enumerate() {
            let fm: Vec<f64> = outcomes.iter().map(|o| o.me[t][0]).collect();
            for (e, label) in labels.iter().enumerate() {
                let star: Vec<f64> = outcomes.iter().map(|o| o.me[t][e]).collect();
                let (value, se) = if e == 0 {
                    (1.0, 0.0)
                } else {
                    let v = mrme(&fm, &star).stage(format!("delta* = {ds}, tau = {tau}, {label}"))?;
                    let stream = ((g * cfg.tau_levels.len() + t) * labels.len() + e) as u64;
                    (v, mrme_se(&fm, &star, base.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
                };
                table.rows.push(MetricRow {
                    tau: Some(tau),
                    estimator: label.clone(),
                    metric: Metric::Mrme,
                    value,
                    se,
                    delta_star: Some(ds),
                });
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficients() {
        assert_eq!(make_coefficients(5, 5, 0.0), vec![1., 1., 1., 1., 1., 0., 0., 0., 0., 0.]);
        assert_eq!(make_coefficients(5, 5, 2.0), vec![1., 1., 1., 1., 1., 2., 0., 0., 0., 0.]);
        let b0 = make_coefficients(3, 4, 0.0);
        for d in [0.0, 0.3, 7.0] {
            let b = make_coefficients(3, 4, d);
            assert!((model_error(&b, &b0).unwrap().sqrt() - d).abs() < 1e-15);
        }
    }

    #[test]
    fn metric_arithmetic() {
        assert_eq!(model_error(&[3.0, 4.0], &[0.0, 0.0]).unwrap(), 25.0);
        assert_eq!(model_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(model_error(&[1.0], &[1.0, 2.0]).is_err());
        let x = DMatrix::identity(2, 2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let b = DVector::from_vec(vec![0.0, 4.0]);
        assert_eq!(pmad(&b, &x, &y).unwrap(), 1.5);
        assert_eq!(pmad(&y, &x, &y).unwrap(), 0.0);
        assert!(pmad(&DVector::zeros(3), &x, &y).is_err());
    }

    #[test]
    fn mrme_cases() {
        let fm = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(mrme(&fm, &fm).unwrap(), 1.0);
        let half: Vec<f64> = fm.iter().map(|v| v / 2.0).collect();
        assert_eq!(mrme(&fm, &half).unwrap(), 2.0);
        assert!(matches!(mrme(&fm, &[0.0; 5]), Err(Error::Degenerate(_))));
        assert!(mrme(&fm, &fm[..3]).is_err());
    }

    #[test]
    fn design_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = generate_design(50_000, 3, 0.5, &mut rng).unwrap();
        let n = x.nrows() as f64;
        for (a, b, want) in [(0, 1, 0.5), (1, 2, 0.5), (0, 2, 0.25)] {
            let c: f64 = x.column(a).dot(&x.column(b)) / n;
            assert!((c - want).abs() < 0.01, "{a}{b} {c}");
        }
        assert!(generate_design(3, 2, 1.0, &mut rng).is_err());
        let s = ar_covariance(2, 0.5);
        assert_eq!(s[(0, 1)], 0.5);
        assert!(ar_covariance(6, 0.5).diagonal().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn error_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let z = sample_errors(ErrorDist::Normal, n, &mut rng);
        assert!(mean(&z).abs() < 0.004);
        let c = sample_errors(ErrorDist::Chisq5, n, &mut rng);
        let se = (10.0 / n as f64).sqrt();
        assert!((mean(&c) - 5.0).abs() < 4.0 * se);
        let l = sample_errors(ErrorDist::Laplace, n, &mut rng);
        let v = sd(&l).powi(2);
        // var of the variance estimate is (mu4 - sigma^4)/n = (24 - 4)/n
        assert!((v - 2.0).abs() < 4.0 * (20.0 / n as f64).sqrt(), "{v}");
        let sk = sample_errors(ErrorDist::SkewNormal, n, &mut rng);
        // E = sqrt(2/pi) * shape / sqrt(1 + shape^2)
        let m = (2.0 / std::f64::consts::PI).sqrt() * 5.0 / 26f64.sqrt();
        assert!((mean(&sk) - m).abs() < 0.005);
    }

    #[test]
    fn config_validation() {
        let c = SimConfig::example1(vec![0.25], ErrorDist::Normal, 10, 1);
        c.validate().unwrap();
        assert_eq!((c.p1, c.p2), (3, 5));
        let mut bad = c.clone();
        bad.replications = 0;
        assert!(bad.validate().is_err());
        let mut bad = c.clone();
        bad.split = Some([50, 0, 200]);
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.split = None;
        bad.penalties = Some(vec![1.0]);
        assert!(bad.validate().is_err());
        let json = r#"{"n": 60, "p1": 5, "p2": 5, "sigma": 1, "tau_levels": [0.5],
                       "error_dist": "normal", "replications": 3, "seed": 9}"#;
        let c = SimConfig::from_json(json).unwrap();
        assert_eq!(c.pretest_levels, DEFAULT_PRETEST_LEVELS.to_vec());
        assert!(SimConfig::from_json(r#"{"n": 1}"#).is_err());
    }

    #[test]
    fn scaling_round_trip() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let sc = Scaling::fit(&x, None).unwrap();
        let z = sc.apply(&x);
        assert_eq!(z.as_slice(), &[-1.0, 0.0, 1.0]);
        let (b0, b) = sc.back_transform(0.5, &[2.0]);
        // z-model 0.5 + 2 z at x = 3 equals raw model at x = 3
        assert!((b0 + b[0] * 3.0 - 2.5).abs() < 1e-14);
        assert!(Scaling::fit(&DMatrix::from_element(4, 1, 2.0), None).is_err());
    }

    #[test]
    fn small_study_is_reproducible() {
        let mut c = SimConfig::example1(vec![0.5], ErrorDist::Laplace, 4, 7);
        c.lambda_count = 10;
        let a = run_study(&c).unwrap();
        let b = run_study(&c).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
        let labels = ["FM", "SM", "PT1", "PT2", "PT3", "PT4", "S", "PS", "Ridge", "Lasso", "ENET"];
        assert_eq!(a.rows.len(), labels.len() * 3 + 3);
        for l in labels {
            assert!(a.get(Some(0.5), l, Metric::Pmad).is_some(), "{l}");
        }
        assert!(a.get(None, "OLS", Metric::Mad).is_some());
        assert!(a.rows.iter().all(|r| r.se >= 0.0 && r.value.is_finite()));
    }
}
