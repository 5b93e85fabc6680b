//! Asymptotic bias, quadratic bias and risk of the five estimators of
//! `beta_1` under local alternatives `beta_2 = kappa / sqrt(n)`.
//!
//! Each estimator is `SM + g(W) (FM - SM)`. With `v3 = sqrt(n)(FM - SM)`,
//! independent of the sub-model error in the limit, every quantity reduces to
//! the three expectations `E g(chi2_{p2+2}(D))`, `E g^2(chi2_{p2+2}(D))` and
//! `E g^2(chi2_{p2+4}(D))`:
//!
//! ```text
//! B = delta (1 - E1)
//! R = w^2 tr(W D11^-1) + delta'W delta (1 - 2 E1 + E2b) + tr(W Phi) E2a
//! ```

mod noncentral;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use noncentral::{
    inv_moment, noncentral_chisq_cdf, noncentral_chisq_pdf, truncated_inv_moment, truncated_inv_moment_series,
};

use crate::error::{Error, Result};
use crate::inference::DesignPartitions;
use crate::linalg::{spd_inverse, sym_pinv};
use crate::special::chisq_critical_value;

/// Which closed form to use for the risks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskFormula {
    /// Risks derived from the joint limit of `(v1, v3)` with the Stein
    /// identity; reduces to the full-model risk at `g = 1`.
    #[default]
    Consistent,
    /// Closed forms with `H(c; Delta)` terms throughout, the cross-covariance
    /// `Sigma_21 = -w^2 D12 D21 D11^-1` and a pseudo-inverse of `Phi`.
    AsPrinted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "FM")]
    Fm,
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "S")]
    S,
    #[serde(rename = "PS")]
    Ps,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [Estimator::Fm, Estimator::Sm, Estimator::Pt, Estimator::S, Estimator::Ps];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::Fm => "FM",
            Estimator::Sm => "SM",
            Estimator::Pt => "PT",
            Estimator::S => "S",
            Estimator::Ps => "PS",
        }
    }
}

/// One value per estimator; Stein-type entries are absent when `p2 < 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerEstimator<T> {
    pub fm: T,
    pub sm: T,
    pub pt: T,
    pub s: Option<T>,
    pub ps: Option<T>,
}

impl<T> PerEstimator<T> {
    pub fn get(&self, e: Estimator) -> Option<&T> {
        match e {
            Estimator::Fm => Some(&self.fm),
            Estimator::Sm => Some(&self.sm),
            Estimator::Pt => Some(&self.pt),
            Estimator::S => self.s.as_ref(),
            Estimator::Ps => self.ps.as_ref(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (Estimator, &T)> {
        Estimator::ALL.into_iter().filter_map(move |e| self.get(e).map(|v| (e, v)))
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticScenario {
    pub parts: DesignPartitions,
    pub w: f64,
    pub kappa: DVector<f64>,
    pub alpha: f64,
    /// Risk weight `W` (p1 x p1, positive definite).
    pub weight: DMatrix<f64>,
    pub formula: RiskFormula,
}

impl AsymptoticScenario {
    pub fn new(parts: DesignPartitions, w: f64, kappa: DVector<f64>, alpha: f64, weight: DMatrix<f64>) -> Result<Self> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::domain(format!("scale w must be positive, got {w}")));
        }
        if kappa.len() != parts.p2 {
            return Err(Error::domain(format!("kappa has length {} but p2 = {}", kappa.len(), parts.p2)));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::domain(format!("test level must lie in (0,1), got {alpha}")));
        }
        if weight.shape() != (parts.p1, parts.p1) {
            return Err(Error::domain(format!("weight matrix must be {0}x{0}", parts.p1)));
        }
        if (&weight - weight.transpose()).amax() > 1e-12 * weight.amax().max(1.0) || weight.clone().cholesky().is_none() {
            return Err(Error::domain("weight matrix must be symmetric positive definite"));
        }
        Ok(Self { parts, w, kappa, alpha, weight, formula: RiskFormula::Consistent })
    }

    /// `D = (rho^|j-k|)` on `p1 + p2` coordinates, `W = I`, `kappa = 0`.
    pub fn autoregressive(p1: usize, p2: usize, rho: f64, w: f64, alpha: f64) -> Result<Self> {
        if !(rho.abs() < 1.0) {
            return Err(Error::domain(format!("correlation must satisfy |rho| < 1, got {rho}")));
        }
        let p = p1 + p2;
        let d = DMatrix::from_fn(p, p, |j, k| rho.powi((j as i32 - k as i32).abs()));
        let parts = DesignPartitions::from_matrix(d, p1, p2)?;
        Self::new(parts, w, DVector::zeros(p2), alpha, DMatrix::identity(p1, p1))
    }

    pub fn with_formula(mut self, formula: RiskFormula) -> Self {
        self.formula = formula;
        self
    }

    pub fn p1(&self) -> usize {
        self.parts.p1
    }

    pub fn p2(&self) -> usize {
        self.parts.p2
    }

    /// `delta = D11^-1 D12 kappa`.
    pub fn delta_vec(&self) -> DVector<f64> {
        &self.parts.d11_inv * (&self.parts.d12 * &self.kappa)
    }

    /// `Delta = kappa' (w^2 D22.1^-1)^-1 kappa`.
    pub fn noncentrality(&self) -> f64 {
        self.kappa.dot(&(&self.parts.d22_1 * &self.kappa)) / (self.w * self.w)
    }

    /// `Phi = w^2 D11^-1 D12 D22.1^-1 D21 D11^-1`.
    pub fn phi(&self) -> DMatrix<f64> {
        let p = &self.parts;
        let a = &p.d11_inv * &p.d12;
        let m = &a * &p.d_sup22 * a.transpose() * (self.w * self.w);
        (&m + m.transpose()) * 0.5
    }

    /// Alternative cross-covariance `Sigma_12 = -w^2 D12 D21 D11^-1`.
    pub fn sigma12(&self) -> DMatrix<f64> {
        let p = &self.parts;
        &p.d12 * &p.d21 * &p.d11_inv * (-self.w * self.w)
    }

    pub fn sigma21(&self) -> DMatrix<f64> {
        self.sigma12().transpose()
    }

    /// `Sigma* = Sigma_21 + w^2 D11.2^-1`; carried for completeness only.
    pub fn sigma_star(&self) -> Result<DMatrix<f64>> {
        Ok(self.sigma21() + spd_inverse(&self.parts.d11_2, "D11.2")? * (self.w * self.w))
    }

    /// Rescales `direction` so that the induced noncentrality equals `target`.
    pub fn with_noncentrality(&self, direction: &DVector<f64>, target: f64) -> Result<Self> {
        if !(target >= 0.0) || !target.is_finite() {
            return Err(Error::domain(format!("noncentrality must be nonnegative, got {target}")));
        }
        if direction.len() != self.p2() || direction.norm() == 0.0 {
            return Err(Error::domain("direction must be a nonzero vector of length p2"));
        }
        let q = direction.dot(&(&self.parts.d22_1 * direction));
        let scale = (target * self.w * self.w / q).sqrt();
        Ok(Self { kappa: direction * scale, ..self.clone() })
    }

    fn critical_value(&self) -> Result<f64> {
        chisq_critical_value(self.p2(), self.alpha)
    }
}

/// `E g(chi2_{p2+2})`, `E g^2(chi2_{p2+2})`, `E g^2(chi2_{p2+4})` for one
/// estimator's weight function.
#[derive(Debug, Clone, Copy)]
struct WeightMoments {
    e1: f64,
    e2a: f64,
    e2b: f64,
}

fn weight_moments(which: Estimator, p2: usize, delta: f64, crit: f64) -> Result<WeightMoments> {
    let (v2, v4) = (p2 + 2, p2 + 4);
    let d = p2 as f64 - 2.0;
    Ok(match which {
        Estimator::Fm => WeightMoments { e1: 1.0, e2a: 1.0, e2b: 1.0 },
        Estimator::Sm => WeightMoments { e1: 0.0, e2a: 0.0, e2b: 0.0 },
        Estimator::Pt => {
            let h2 = noncentral_chisq_cdf(crit, v2, delta)?;
            let h4 = noncentral_chisq_cdf(crit, v4, delta)?;
            WeightMoments { e1: 1.0 - h2, e2a: 1.0 - h2, e2b: 1.0 - h4 }
        }
        Estimator::S => {
            let sq = |v: usize| -> Result<f64> {
                Ok(1.0 - 2.0 * d * inv_moment(v, delta, 1)? + d * d * inv_moment(v, delta, 2)?)
            };
            WeightMoments { e1: 1.0 - d * inv_moment(v2, delta, 1)?, e2a: sq(v2)?, e2b: sq(v4)? }
        }
        Estimator::Ps => {
            // g = (1 - d/x) I(x > d): subtract the part below d from the S moments
            let lower1 = |v: usize| -> Result<f64> {
                Ok(noncentral_chisq_cdf(d, v, delta)? - d * truncated_inv_moment(v, delta, 1, d)?)
            };
            let lower2 = |v: usize| -> Result<f64> {
                Ok(noncentral_chisq_cdf(d, v, delta)? - 2.0 * d * truncated_inv_moment(v, delta, 1, d)?
                    + d * d * truncated_inv_moment(v, delta, 2, d)?)
            };
            let s = weight_moments(Estimator::S, p2, delta, crit)?;
            WeightMoments {
                e1: s.e1 - lower1(v2)?,
                e2a: (s.e2a - lower2(v2)?).max(0.0),
                e2b: (s.e2b - lower2(v4)?).max(0.0),
            }
        }
    })
}

fn estimators_for(p2: usize) -> Vec<Estimator> {
    Estimator::ALL.into_iter().filter(|e| p2 >= 3 || !matches!(e, Estimator::S | Estimator::Ps)).collect()
}

fn collect<T: Clone>(items: Vec<(Estimator, T)>) -> PerEstimator<T> {
    let find = |e: Estimator| items.iter().find(|(k, _)| *k == e).map(|(_, v)| v.clone());
    PerEstimator {
        fm: find(Estimator::Fm).expect("FM always present"),
        sm: find(Estimator::Sm).expect("SM always present"),
        pt: find(Estimator::Pt).expect("PT always present"),
        s: find(Estimator::S),
        ps: find(Estimator::Ps),
    }
}

/// Asymptotic bias of `sqrt(n)(beta1_hat - beta1)` for each estimator.
pub fn bias_all(scn: &AsymptoticScenario) -> Result<PerEstimator<DVector<f64>>> {
    let delta = scn.noncentrality();
    let dv = scn.delta_vec();
    let crit = scn.critical_value()?;
    let mut out = Vec::new();
    for e in estimators_for(scn.p2()) {
        let b = match e {
            Estimator::Fm => DVector::zeros(scn.p1()),
            Estimator::Sm => dv.clone(),
            _ => &dv * (1.0 - weight_moments(e, scn.p2(), delta, crit)?.e1),
        };
        out.push((e, b));
    }
    Ok(collect(out))
}

/// `B' D11.2 B`.
pub fn quadratic_bias(bias: &DVector<f64>, parts: &DesignPartitions) -> Result<f64> {
    if bias.len() != parts.p1 {
        return Err(Error::domain(format!("bias has length {} but p1 = {}", bias.len(), parts.p1)));
    }
    Ok(bias.dot(&(&parts.d11_2 * bias)).max(0.0))
}

/// Asymptotic weighted risk `tr(W Gamma)` for each estimator.
pub fn risk_all(scn: &AsymptoticScenario) -> Result<PerEstimator<f64>> {
    match scn.formula {
        RiskFormula::Consistent => risk_consistent(scn),
        RiskFormula::AsPrinted => risk_as_printed(scn),
    }
}

fn risk_consistent(scn: &AsymptoticScenario) -> Result<PerEstimator<f64>> {
    let delta = scn.noncentrality();
    let dv = scn.delta_vec();
    let m = &scn.weight;
    let dmd = dv.dot(&(m * &dv));
    let tr_phi = (m * scn.phi()).trace();
    let base = scn.w * scn.w * (m * &scn.parts.d11_inv).trace();
    let crit = scn.critical_value()?;
    let mut out = Vec::new();
    for e in estimators_for(scn.p2()) {
        let r = match e {
            Estimator::Fm => {
                let inv = spd_inverse(&scn.parts.d11_2, "D11.2")?;
                scn.w * scn.w * (m * inv).trace()
            }
            Estimator::Sm => base + dmd,
            _ => {
                let g = weight_moments(e, scn.p2(), delta, crit)?;
                base + dmd * (1.0 - 2.0 * g.e1 + g.e2b) + tr_phi * g.e2a
            }
        };
        out.push((e, r));
    }
    Ok(collect(out))
}

fn risk_as_printed(scn: &AsymptoticScenario) -> Result<PerEstimator<f64>> {
    let delta = scn.noncentrality();
    let p2 = scn.p2();
    let (v2, v4) = (p2 + 2, p2 + 4);
    let d = p2 as f64 - 2.0;
    let crit = scn.critical_value()?;
    let m = &scn.weight;
    let dv = scn.delta_vec();
    let ddt = &dv * dv.transpose();
    let phi = scn.phi();
    let s21 = scn.sigma21();
    let phi_pinv = sym_pinv(&phi);
    let w2 = scn.w * scn.w;

    let tr_ws21 = (m * &s21).trace();
    let tr_wphi = (m * &phi).trace();
    let dwd = dv.dot(&(m * &dv));
    let t_inv = (m * &ddt * &phi_pinv * &s21).trace();
    let t_fwd = (m * &ddt * &phi * &s21).trace();
    let h = |v: usize, x: f64| noncentral_chisq_cdf(x, v, delta);

    let r_fm = w2 * (m * spd_inverse(&scn.parts.d11_2, "D11.2")?).trace();
    let r_sm = w2 * (m * &scn.parts.d11_inv).trace() + dwd;
    let r_pt = r_fm + t_inv * (h(v4, crit)? + h(v2, crit)?) + tr_wphi * h(v2, crit)? + dwd * h(v4, crit)?
        - 2.0 * tr_ws21 * h(v2, crit)?;
    let mut out = vec![(Estimator::Fm, r_fm), (Estimator::Sm, r_sm), (Estimator::Pt, r_pt)];
    if p2 >= 3 {
        let r_s = r_fm - 2.0 * d * tr_ws21 * inv_moment(v2, delta, 1)? - 2.0 * d * t_fwd * inv_moment(v4, delta, 1)?
            + d * d * tr_wphi * h(v2, crit)?
            + d * d * dwd * h(v4, crit)?;
        let trunc1 = |v: usize| -> Result<f64> { Ok(h(v, d)? - d * truncated_inv_moment(v, delta, 1, d)?) };
        let t4 = truncated_inv_moment(v2, delta, 2, d)?;
        let r_ps = r_s - 2.0 * tr_ws21 * trunc1(v2)? + 2.0 * t_inv * trunc1(v4)? + 2.0 * t_inv * trunc1(v2)?
            - d * d * tr_wphi * t4
            - d * d * dwd * t4
            + tr_wphi * h(v2, d)?
            + dwd * h(v4, d)?;
        out.push((Estimator::S, r_s));
        out.push((Estimator::Ps, r_ps));
    }
    Ok(collect(out))
}

/// Bias, quadratic bias and risk of one estimator along a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorCurve {
    pub estimator: Estimator,
    pub bias: Vec<Vec<f64>>,
    pub bias_norm: Vec<f64>,
    pub qb: Vec<f64>,
    pub risk: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub deltas: Vec<f64>,
    pub formula: RiskFormula,
    pub curves: Vec<EstimatorCurve>,
}

impl RiskCurve {
    pub fn curve(&self, e: Estimator) -> Option<&EstimatorCurve> {
        self.curves.iter().find(|c| c.estimator == e)
    }

    /// Long format: `delta, estimator, bias_norm, qb, risk`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        wtr.write_record(["delta", "estimator", "bias_norm", "qb", "risk"]).map_err(io)?;
        for (i, dl) in self.deltas.iter().enumerate() {
            for c in &self.curves {
                wtr.write_record([
                    dl.to_string(),
                    c.estimator.label().to_string(),
                    c.bias_norm[i].to_string(),
                    c.qb[i].to_string(),
                    c.risk[i].to_string(),
                ])
                .map_err(io)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sweeps the bias/risk formulas over a noncentrality grid, moving `kappa`
/// along the scenario's direction (or `1/sqrt(p2)` when `kappa = 0`).
pub fn risk_curve(scn: &AsymptoticScenario, delta_grid: &[f64]) -> Result<RiskCurve> {
    if delta_grid.is_empty() {
        return Err(Error::domain("noncentrality grid is empty"));
    }
    if delta_grid.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
        return Err(Error::domain("noncentrality grid values must be finite and nonnegative"));
    }
    if delta_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("noncentrality grid must be sorted ascending"));
    }
    let direction = if scn.kappa.norm() > 0.0 {
        scn.kappa.normalize()
    } else {
        DVector::from_element(scn.p2(), 1.0 / (scn.p2() as f64).sqrt())
    };
    let points: Vec<(PerEstimator<DVector<f64>>, PerEstimator<f64>)> = delta_grid
        .par_iter()
        .map(|&dl| {
            let s = scn.with_noncentrality(&direction, dl)?;
            Ok((bias_all(&s)?, risk_all(&s)?))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut curves = Vec::new();
    for e in estimators_for(scn.p2()) {
        let mut c = EstimatorCurve { estimator: e, bias: vec![], bias_norm: vec![], qb: vec![], risk: vec![] };
        for (b, r) in &points {
            let bv = b.get(e).expect("estimator present");
            c.qb.push(quadratic_bias(bv, &scn.parts)?);
            c.bias_norm.push(bv.norm());
            c.bias.push(bv.iter().cloned().collect());
            c.risk.push(*r.get(e).expect("estimator present"));
        }
        curves.push(c);
    }
    Ok(RiskCurve { deltas: delta_grid.to_vec(), formula: scn.formula, curves })
}
