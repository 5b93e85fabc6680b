//! Domain types shared by every estimator: the partitioned design, the fit
//! record, the quantile (check) loss and the least-squares baseline.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("tau must lie strictly inside (0,1), got {tau}")))
    }
}

/// The check loss `rho_tau(u) = u * (tau - 1{u < 0})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    tau: f64,
}

impl LossSpec {
    pub fn new(tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self { tau })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u < 0.0 {
            (self.tau - 1.0) * u
        } else {
            self.tau * u
        }
    }

    /// `sum_i rho_tau(r_i)`.
    pub fn total<'a>(&self, residuals: impl IntoIterator<Item = &'a f64>) -> f64 {
        residuals.into_iter().map(|&u| self.eval(u)).sum()
    }
}

/// Quantile loss of a single residual.
pub fn quantile_loss(u: f64, tau: f64) -> Result<f64> {
    Ok(LossSpec::new(tau)?.eval(u))
}

/// Left-continuous inverse of the empirical CDF: the smallest order statistic
/// `y_(k)` with `k / n >= tau`.
pub fn empirical_quantile(values: &[f64], tau: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("empirical quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&tau) || tau.is_nan() {
        return Err(Error::domain(format!("tau must lie in [0,1], got {tau}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    // smallest k (1-based) with k >= n*tau; guard against n*tau landing a hair
    // above an integer through rounding
    let target = n as f64 * tau;
    let mut k = target.ceil() as usize;
    if k > 0 && ((k - 1) as f64 - target).abs() < 1e-9 * n as f64 {
        k -= 1;
    }
    let k = k.clamp(1, n);
    Ok(v[k - 1])
}

/// Design matrix, response and the column split `p = p1 + p2`.
///
/// The first `p1` columns carry the retained coefficients `beta_1`, the last
/// `p2` the candidate-irrelevant block `beta_2`. An intercept, when wanted, is
/// an explicit column of ones.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionedDesign {
    x: DMatrix<f64>,
    y: DVector<f64>,
    tau: f64,
    p1: usize,
    p2: usize,
}

impl PartitionedDesign {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, tau: f64, p1: usize, p2: usize) -> Result<Self> {
        check_tau(tau)?;
        let (n, p) = x.shape();
        if p == 0 {
            return Err(Error::domain("design needs at least one column"));
        }
        if p1 + p2 != p {
            return Err(Error::domain(format!(
                "partition {p1} + {p2} does not match {p} columns"
            )));
        }
        if y.len() != n {
            return Err(Error::domain(format!(
                "response has length {} but design has {n} rows",
                y.len()
            )));
        }
        if n < p {
            return Err(Error::domain(format!("need n >= p, got n = {n}, p = {p}")));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("design or response contains non-finite values"));
        }
        linalg::check_full_column_rank(&x)?;
        Ok(Self { x, y, tau, p1, p2 })
    }

    /// Same data at a different quantile level.
    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self { tau, ..self.clone() })
    }

    /// Same data with the response replaced.
    pub fn with_response(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y, self.tau, self.p1, self.p2)
    }

    /// The restricted design holding only the first `p1` columns (all in block 1).
    pub fn submodel(&self) -> Result<Self> {
        if self.p1 == 0 {
            return Err(Error::domain("sub-model with p1 = 0 has no columns"));
        }
        let x1 = self.x.columns(0, self.p1).into_owned();
        Self::new(x1, self.y.clone(), self.tau, self.p1, 0)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn p1(&self) -> usize {
        self.p1
    }
    pub fn p2(&self) -> usize {
        self.p2
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
    pub fn loss(&self) -> LossSpec {
        LossSpec { tau: self.tau }
    }

    /// `y - X beta`.
    pub fn residuals(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        self.loss().total(self.residuals(beta).iter())
    }

    /// Indices of columns that are constant and nonzero (intercepts).
    pub fn intercept_columns(&self) -> Vec<usize> {
        (0..self.p())
            .filter(|&j| {
                let c = self.x.column(j);
                let first = c[0];
                first != 0.0 && c.iter().all(|&v| v == first)
            })
            .collect()
    }
}

/// Result of a single quantile (or least-squares) fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub beta: Vec<f64>,
    /// `sum_i rho_tau(residual_i)` (for least squares: the residual sum of squares).
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl QuantileFit {
    pub(crate) fn from_beta(design: &PartitionedDesign, beta: DVector<f64>, iterations: usize) -> Self {
        let r = design.residuals(&beta);
        let objective = design.loss().total(r.iter());
        Self {
            beta: beta.iter().cloned().collect(),
            objective,
            residuals: r.iter().cloned().collect(),
            iterations,
            converged: true,
        }
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }

    /// Trailing `p2` coefficients.
    pub fn beta2(&self, p2: usize) -> DVector<f64> {
        let p = self.beta.len();
        DVector::from_column_slice(&self.beta[p - p2..])
    }

    /// Leading `p1` coefficients.
    pub fn beta1(&self, p1: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.beta[..p1])
    }
}

/// Ordinary least squares, `(X'X)^{-1} X'y`, by a column-pivoted QR.
pub fn ls_fit(design: &PartitionedDesign) -> Result<QuantileFit> {
    ls_coefficients(design.x(), design.y()).map(|beta| {
        let r = design.residuals(&beta);
        QuantileFit {
            objective: r.norm_squared(),
            beta: beta.iter().cloned().collect(),
            residuals: r.iter().cloned().collect(),
            iterations: 1,
            converged: true,
        }
    })
}

/// Least-squares coefficients for an arbitrary full-rank matrix.
pub fn ls_coefficients(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    linalg::check_full_column_rank(x)?;
    let qr = x.clone().col_piv_qr();
    let p = x.ncols();
    let qty = qr.q().tr_mul(y);
    let r = qr.r();
    let z = r
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .ok_or_else(|| Error::SingularDesign {
            columns: (0..p).collect(),
            detail: "triangular factor is singular".into(),
        })?;
    let mut beta = z;
    qr.p().inv_permute_rows(&mut beta);
    Ok(beta)
}
