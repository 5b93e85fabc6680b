//! Primal-dual interior-point method for quantile regression, optionally with
//! per-row levels, Huber-type smoothing of the check loss and a diagonal
//! ridge term.
//!
//! Plain check-loss minimisation is solved through its bounded dual
//!
//! ```text
//!     max  y'a   s.t.  X'a = (1 - tau) X'1,   0 <= a <= 1
//! ```
//!
//! with Mehrotra predictor-corrector steps; the coefficient vector is minus the
//! equality multiplier. A smoothed row uses the identity
//! `smoothed(u) = min_t rho_tau(u - t) + t^2 / (4 gamma) + (tau - 1/2) t`,
//! so it contributes a free variable `t_i` that is eliminated in closed form.
//! Each Newton step still costs one `p x p` Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::design::LossSpec;
use crate::error::{Error, Result};

const STEP_FRACTION: f64 = 0.99995;
// smoothed rows stall near the boundary with the aggressive LP fraction
const QP_STEP_FRACTION: f64 = 0.99;

pub(crate) struct IpmOutcome {
    pub beta: DVector<f64>,
    pub iterations: usize,
}

pub(crate) struct IpmProblem<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub tau: DVector<f64>,
    /// `2 gamma_i`; zero on exact check-loss rows.
    pub smooth: DVector<f64>,
    /// Diagonal of the ridge matrix (objective term `beta' Q beta / 2`).
    pub ridge: DVector<f64>,
}

impl<'a> IpmProblem<'a> {
    pub fn quantile(x: &'a DMatrix<f64>, y: &'a DVector<f64>, tau: f64) -> Self {
        let (n, p) = x.shape();
        Self {
            x,
            y,
            tau: DVector::from_element(n, tau),
            smooth: DVector::zeros(n),
            ridge: DVector::zeros(p),
        }
    }

    fn is_linear(&self) -> bool {
        self.smooth.iter().all(|&v| v == 0.0) && self.ridge.iter().all(|&v| v == 0.0)
    }

    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        let r = self.y - self.x * beta;
        let mut f = 0.0;
        for i in 0..r.len() {
            f += row_loss(r[i], self.tau[i], 0.5 * self.smooth[i]);
        }
        f + 0.5 * beta.iter().zip(self.ridge.iter()).map(|(b, q)| q * b * b).sum::<f64>()
    }
}

/// Check loss, or its smoothed version when `gamma > 0`.
pub(crate) fn row_loss(u: f64, tau: f64, gamma: f64) -> f64 {
    if gamma > 0.0 {
        let a = u.abs();
        let huber = if a <= gamma { u * u / (2.0 * gamma) } else { a - gamma / 2.0 };
        0.5 * huber + (tau - 0.5) * u
    } else if u < 0.0 {
        (tau - 1.0) * u
    } else {
        tau * u
    }
}

fn weighted_gram(x: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut m: DMatrix<f64> = DMatrix::zeros(p, p);
    for (i, row) in x.row_iter().enumerate() {
        let di = d[i];
        for j in 0..p {
            let v = di * row[j];
            if v == 0.0 {
                continue;
            }
            for k in j..p {
                m[(j, k)] += v * row[k];
            }
        }
    }
    for j in 0..p {
        for k in 0..j {
            m[(j, k)] = m[(k, j)];
        }
    }
    m
}

fn solve_normal(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    // late iterations can make the normal matrix numerically indefinite
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut reg = m.clone();
    for j in 0..m.ncols() {
        reg[(j, j)] += 1e-13 * scale;
    }
    if let Some(ch) = reg.cholesky() {
        return Some(ch.solve(rhs));
    }
    m.clone().lu().solve(rhs)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = f64::INFINITY;
    for (vi, dvi) in v.iter().zip(dv.iter()) {
        if *dvi < 0.0 {
            a = a.min(-vi / dvi);
        }
    }
    a
}

pub(crate) fn solve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<IpmOutcome> {
    LossSpec::new(tau)?;
    solve_problem(&IpmProblem::quantile(x, y, tau), tolerance, max_iterations)
}

pub(crate) fn solve_problem(prob: &IpmProblem<'_>, tolerance: f64, max_iterations: usize) -> Result<IpmOutcome> {
    let (x, y) = (prob.x, prob.y);
    let (n, p) = x.shape();
    let linear = prob.is_linear();
    let (q, sm) = (&prob.ridge, &prob.smooth);
    let c = -y;
    let one_minus_tau = prob.tau.map(|t| 1.0 - t);
    let b = x.tr_mul(&one_minus_tau);

    let mut a = one_minus_tau.clone();
    let mut s = prob.tau.clone();
    let mut t = sm.component_mul(&a.map(|v| v - 0.5));

    // dual start from (ridge) least squares; the common shift keeps the
    // dual residual at zero
    let mut xtx = x.tr_mul(x);
    for j in 0..p {
        xtx[(j, j)] += q[j];
    }
    let mut yd = solve_normal(&xtx, &x.tr_mul(&c)).ok_or_else(|| Error::SingularDesign {
        columns: (0..p).collect(),
        detail: "X'X is singular".into(),
    })?;
    let r0 = &c - x * &yd + &t;
    let shift = (r0.iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(1e-8 * (1.0 + y.amax()));
    let mut z = r0.map(|v| v.max(0.0) + shift);
    let mut w = r0.map(|v| (-v).max(0.0) + shift);

    let two_n = 2.0 * n as f64;
    let feas_p = 1e-8 * (1.0 + b.amax());
    let feas_d = 1e-8 * (1.0 + y.amax());
    let mut gap = f64::INFINITY;
    let mut beta = -&yd;

    for iter in 0..max_iterations {
        beta = -&yd;
        let rd = &c - x * &yd + &t - &z + &w;
        let mut rp = &b - x.tr_mul(&a);
        for j in 0..p {
            rp[j] -= q[j] * yd[j];
        }
        let rt = sm.component_mul(&a.map(|v| v - 0.5)) - &t;
        let primal = prob.objective(&beta);
        gap = if linear {
            let dual: f64 = y.iter().zip(a.iter()).zip(one_minus_tau.iter()).map(|((yi, ai), oi)| yi * (ai - oi)).sum();
            primal - dual
        } else {
            a.dot(&z) + s.dot(&w)
        };
        if gap.abs() <= tolerance * primal.abs().max(1.0)
            && rp.amax() <= feas_p
            && rd.amax() <= feas_d
            && rt.amax() <= feas_d
        {
            return Ok(IpmOutcome { beta, iterations: iter });
        }

        let mu = (a.dot(&z) + s.dot(&w)) / two_n;
        let inv_theta = DVector::from_fn(n, |i, _| 1.0 / (z[i] / a[i] + w[i] / s[i] + sm[i]));
        let mut m = weighted_gram(x, &inv_theta);
        for j in 0..p {
            m[(j, j)] += q[j];
        }

        let direction = |rxz: &DVector<f64>, rsw: &DVector<f64>| -> Option<_> {
            let g = DVector::from_fn(n, |i, _| rd[i] + rt[i] - rxz[i] / a[i] + rsw[i] / s[i]);
            let rhs = &rp + x.tr_mul(&g.component_mul(&inv_theta));
            let dy = solve_normal(&m, &rhs)?;
            let da = (x * &dy - &g).component_mul(&inv_theta);
            let dz = DVector::from_fn(n, |i, _| (rxz[i] - z[i] * da[i]) / a[i]);
            let dw = DVector::from_fn(n, |i, _| (rsw[i] + w[i] * da[i]) / s[i]);
            let dt = sm.component_mul(&da) + &rt;
            Some((dy, da, dz, dw, dt))
        };

        // predictor
        let rxz = -a.component_mul(&z);
        let rsw = -s.component_mul(&w);
        let Some((_, da_aff, dz_aff, dw_aff, _)) = direction(&rxz, &rsw) else {
            break;
        };
        let ds_aff = -&da_aff;
        let ap = 1f64.min(max_step(&a, &da_aff)).min(max_step(&s, &ds_aff));
        let ad = 1f64.min(max_step(&z, &dz_aff)).min(max_step(&w, &dw_aff));
        let mu_aff = ((&a + ap * &da_aff).dot(&(&z + ad * &dz_aff))
            + (&s + ap * &ds_aff).dot(&(&w + ad * &dw_aff)))
            / two_n;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector
        let rxz = DVector::from_fn(n, |i, _| sigma * mu - a[i] * z[i] - da_aff[i] * dz_aff[i]);
        let rsw = DVector::from_fn(n, |i, _| sigma * mu - s[i] * w[i] - ds_aff[i] * dw_aff[i]);
        let Some((dy, da, dz, dw, dt)) = direction(&rxz, &rsw) else {
            break;
        };
        let ds = -&da;
        let frac = if linear { STEP_FRACTION } else { QP_STEP_FRACTION };
        let ap = 1f64.min(frac * max_step(&a, &da).min(max_step(&s, &ds)));
        let ad = 1f64.min(frac * max_step(&z, &dz).min(max_step(&w, &dw)));
        a += ap * &da;
        s += ap * &ds;
        t += ap * &dt;
        yd += ad * &dy;
        z += ad * &dz;
        w += ad * &dw;
        if !(a.iter().chain(s.iter()).chain(z.iter()).chain(w.iter()).all(|v| v.is_finite())) {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: max_iterations,
        gap,
        last_beta: beta.iter().cloned().collect(),
    })
}

/// Snaps an interior-point solution onto the optimal vertex when the optimum
/// is a vertex: at least `p` residuals are numerically zero and the
/// interpolant through `p` of them is no worse. Otherwise (optimal face) the
/// interior-point limit is returned unchanged.
pub(crate) fn polish_vertex(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    tau: f64,
    beta: &DVector<f64>,
) -> Option<DVector<f64>> {
    let (n, p) = x.shape();
    let loss = LossSpec::new(tau).ok()?;
    let r = y - x * beta;
    let obj = loss.total(r.iter());
    let scale = 1.0 + y.amax();
    let thresh = 1e-6 * scale;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| r[i].abs().total_cmp(&r[j].abs()));

    let mut chosen: Vec<usize> = Vec::with_capacity(p);
    for &i in &order {
        if r[i].abs() > thresh {
            break;
        }
        chosen.push(i);
        let sub = DMatrix::from_fn(chosen.len(), p, |a, b| x[(chosen[a], b)]);
        let sv = sub.singular_values();
        let smax = sv.max();
        if sv.min() <= 1e-10 * smax.max(1.0) * p as f64 {
            chosen.pop();
        }
        if chosen.len() == p {
            break;
        }
    }
    if chosen.len() < p {
        return None;
    }
    let xh = DMatrix::from_fn(p, p, |a, b| x[(chosen[a], b)]);
    let yh = DVector::from_fn(p, |a, _| y[chosen[a]]);
    let cand = xh.lu().solve(&yh)?;
    let cand_obj = loss.total((y - x * &cand).iter());
    (cand_obj <= obj + 1e-12 * obj.max(1.0)).then_some(cand)
}
