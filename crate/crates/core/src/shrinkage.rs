//! Pretest, Stein and positive-part Stein combinations of the full- and
//! sub-model fits.
//!
//! Every estimator has the form `sm + g * (fm - sm)` for a scalar weight `g`
//! that depends only on the Wald statistic.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::design::PartitionedDesign;
use crate::error::{Error, Result, StageExt};
use crate::inference::{compute_partitions, estimate_sparsity, scale_from_sparsity, wald_statistic, WaldResult};
use crate::solver::{fit_full, fit_submodel, SolverOptions};

fn check_lengths(fm: &DVector<f64>, sm: &DVector<f64>) -> Result<()> {
    if fm.len() != sm.len() {
        return Err(Error::domain(format!(
            "full-model and sub-model vectors differ in length ({} vs {})",
            fm.len(),
            sm.len()
        )));
    }
    Ok(())
}

fn stein_d(p2: usize) -> Result<f64> {
    if p2 < 3 {
        return Err(Error::domain(format!(
            "Stein-type estimators need d = p2 - 2 >= 1, got p2 = {p2}"
        )));
    }
    Ok((p2 - 2) as f64)
}

/// `sm + g (fm - sm)`.
pub fn combine(fm: &DVector<f64>, sm: &DVector<f64>, g: f64) -> DVector<f64> {
    sm + (fm - sm) * g
}

/// Weight on the full model: 0 below the critical value, 1 otherwise.
pub fn pretest_weight(wald: &WaldResult) -> f64 {
    if wald.statistic < wald.critical_value {
        0.0
    } else {
        1.0
    }
}

/// `1 - d / W`; negative when `W < d`.
pub fn stein_weight(wald_stat: f64, p2: usize) -> Result<f64> {
    let d = stein_d(p2)?;
    if !(wald_stat > 0.0) {
        return Err(Error::domain(format!(
            "Stein weight needs a positive Wald statistic, got {wald_stat}; use the sub-model"
        )));
    }
    Ok(1.0 - d / wald_stat)
}

/// `max(0, 1 - d / W)`.
pub fn positive_stein_weight(wald_stat: f64, p2: usize) -> Result<f64> {
    let d = stein_d(p2)?;
    if !(wald_stat >= 0.0) {
        return Err(Error::domain(format!("Wald statistic must be nonnegative, got {wald_stat}")));
    }
    if wald_stat <= d {
        Ok(0.0)
    } else {
        Ok(1.0 - d / wald_stat)
    }
}

/// Hard switch: `sm` when the test accepts, `fm` when it rejects. The result
/// is a bitwise copy of one input.
pub fn pretest(fm: &DVector<f64>, sm: &DVector<f64>, wald: &WaldResult) -> Result<DVector<f64>> {
    check_lengths(fm, sm)?;
    Ok(if wald.statistic < wald.critical_value { sm.clone() } else { fm.clone() })
}

/// `fm - (d / W)(fm - sm)` with `d = p2 - 2`.
pub fn stein(fm: &DVector<f64>, sm: &DVector<f64>, wald_stat: f64, p2: usize) -> Result<DVector<f64>> {
    check_lengths(fm, sm)?;
    let g = stein_weight(wald_stat, p2)?;
    if g == 0.0 {
        return Ok(sm.clone());
    }
    let d = (p2 - 2) as f64;
    Ok(fm - (fm - sm) * (d / wald_stat))
}

/// `sm + max(0, 1 - d / W)(fm - sm)`.
pub fn positive_stein(fm: &DVector<f64>, sm: &DVector<f64>, wald_stat: f64, p2: usize) -> Result<DVector<f64>> {
    check_lengths(fm, sm)?;
    let g = positive_stein_weight(wald_stat, p2)?;
    if g == 0.0 {
        return Ok(sm.clone());
    }
    stein(fm, sm, wald_stat, p2)
}

/// The five estimators of `beta_1` from one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageSet {
    pub beta1_fm: Vec<f64>,
    pub beta1_sm: Vec<f64>,
    pub beta1_pt: Vec<f64>,
    /// Absent when `p2 < 3`.
    pub beta1_s: Option<Vec<f64>>,
    pub beta1_ps: Option<Vec<f64>>,
    pub wald: WaldResult,
    /// `p2 - 2` (negative when Stein-type estimators are unavailable).
    pub d: i64,
    pub alpha: f64,
    /// Full-length fits; the sub-model carries exact zeros in the last `p2` slots.
    pub full_fm: Vec<f64>,
    pub full_sm: Vec<f64>,
}

/// Which combination of the two fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Combination {
    Full,
    Sub,
    Pretest { alpha: f64 },
    Stein,
    PositiveStein,
}

impl ShrinkageSet {
    pub fn stein_available(&self) -> bool {
        self.d >= 1
    }

    /// Weight on the full model for a combination. Stein at `W = 0` falls
    /// back to the sub-model.
    pub fn weight(&self, which: Combination) -> Result<f64> {
        let p2 = self.wald.dof;
        match which {
            Combination::Full => Ok(1.0),
            Combination::Sub => Ok(0.0),
            Combination::Pretest { alpha } => Ok(pretest_weight(&self.wald.at_level(alpha)?)),
            Combination::Stein if self.wald.statistic == 0.0 => {
                stein_d(p2)?;
                Ok(0.0)
            }
            Combination::Stein => stein_weight(self.wald.statistic, p2),
            Combination::PositiveStein => positive_stein_weight(self.wald.statistic, p2),
        }
    }

    /// Applies the combination weight to the whole coefficient vector, so the
    /// trailing block becomes `g * beta2_fm`.
    pub fn full_vector(&self, which: Combination) -> Result<DVector<f64>> {
        let g = self.weight(which)?;
        let fm = DVector::from_column_slice(&self.full_fm);
        let sm = DVector::from_column_slice(&self.full_sm);
        Ok(combine(&fm, &sm, g))
    }
}

/// Fits both models, runs the Wald test at level `alpha` and forms every
/// combination.
pub fn estimate_all(design: &PartitionedDesign, alpha: f64, options: &SolverOptions) -> Result<ShrinkageSet> {
    let fm = fit_full(design, options).stage("full-model fit")?;
    let sm = fit_submodel(design, options).stage("sub-model fit")?;
    let parts = compute_partitions(design).stage("design partitions")?;
    let s = estimate_sparsity(&fm.residuals, design.tau(), design.n()).stage("sparsity")?;
    let w = scale_from_sparsity(design.tau(), s);
    let wald = wald_statistic(&fm, &parts, w, design.tau(), design.n(), alpha).stage("wald test")?;
    from_fits(&fm.beta, &sm.beta, design.p1(), wald, alpha)
}

/// Assembles the set from precomputed full-length fits and a Wald result.
pub fn from_fits(full_fm: &[f64], full_sm: &[f64], p1: usize, wald: WaldResult, alpha: f64) -> Result<ShrinkageSet> {
    let fm1 = DVector::from_column_slice(&full_fm[..p1]);
    let sm1 = DVector::from_column_slice(&full_sm[..p1]);
    let p2 = wald.dof;
    let pt = pretest(&fm1, &sm1, &wald).stage("pretest")?;
    let (s, ps) = if p2 >= 3 {
        let s = if wald.statistic == 0.0 { sm1.clone() } else { stein(&fm1, &sm1, wald.statistic, p2)? };
        let ps = positive_stein(&fm1, &sm1, wald.statistic, p2)?;
        (Some(s.iter().cloned().collect()), Some(ps.iter().cloned().collect()))
    } else {
        (None, None)
    };
    Ok(ShrinkageSet {
        beta1_fm: fm1.iter().cloned().collect(),
        beta1_sm: sm1.iter().cloned().collect(),
        beta1_pt: pt.iter().cloned().collect(),
        beta1_s: s,
        beta1_ps: ps,
        d: p2 as i64 - 2,
        alpha,
        wald,
        full_fm: full_fm.to_vec(),
        full_sm: full_sm.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::chisq_critical_value;
    use proptest::prelude::*;

    fn wald(stat: f64, p2: usize, alpha: f64) -> WaldResult {
        let c = chisq_critical_value(p2, alpha).unwrap();
        WaldResult {
            statistic: stat,
            dof: p2,
            sparsity: 1.0,
            w: 0.5,
            alpha,
            critical_value: c,
            reject: stat >= c,
        }
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn pretest_branches() {
        let fm = v(&[1.0, 2.0]);
        let sm = v(&[0.5, 0.0]);
        assert_eq!(pretest(&fm, &sm, &wald(0.0, 5, 0.05)).unwrap(), sm);
        let c = chisq_critical_value(5, 0.05).unwrap();
        assert_eq!(pretest(&fm, &sm, &wald(10.0 * c, 5, 0.05)).unwrap(), fm);
        assert!((c - 11.0705).abs() < 1e-4);
        assert_eq!(pretest(&fm, &sm, &wald(c - 1e-9, 5, 0.05)).unwrap(), sm);
        assert_eq!(pretest(&fm, &sm, &wald(c, 5, 0.05)).unwrap(), fm);
        assert!(pretest(&fm, &v(&[1.0]), &wald(1.0, 5, 0.05)).is_err());
    }

    #[test]
    fn stein_examples() {
        let fm = v(&[1.0, 0.0]);
        let sm = v(&[0.0, 0.0]);
        assert_eq!(stein(&fm, &sm, 6.0, 5).unwrap(), v(&[0.5, 0.0]));
        assert_eq!(stein(&fm, &sm, 3.0, 5).unwrap(), sm);
        assert_eq!(stein(&fm, &fm, 0.7, 5).unwrap(), fm);
        assert!(matches!(stein(&fm, &sm, 0.0, 5), Err(Error::Domain(_))));
        let e = stein(&fm, &sm, 1.0, 2).unwrap_err();
        assert!(e.to_string().contains("d = p2 - 2 >= 1"));
        let far = stein(&fm, &sm, 1e12, 5).unwrap();
        assert!((far[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn positive_stein_examples() {
        let fm = v(&[1.0, 0.0]);
        let sm = v(&[0.0, 0.0]);
        assert_eq!(positive_stein(&fm, &sm, 1.0, 5).unwrap(), sm);
        assert_eq!(positive_stein(&fm, &sm, 0.0, 5).unwrap(), sm);
        assert_eq!(positive_stein(&fm, &sm, 6.0, 5).unwrap(), v(&[0.5, 0.0]));
        assert!(positive_stein(&fm, &sm, 1.0, 2).is_err());
    }

    #[test]
    fn full_vector_blends_trailing_block() {
        let w = wald(6.0, 5, 0.05);
        let fm = [1.0, 1.0, 0.1, 0.2, 0.3, 0.4, 0.5];
        let sm = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let set = from_fits(&fm, &sm, 2, w, 0.05).unwrap();
        let ps = set.full_vector(Combination::PositiveStein).unwrap();
        assert!((ps[2] - 0.05).abs() < 1e-15);
        assert_eq!(set.full_vector(Combination::Sub).unwrap()[6], 0.0);
        assert_eq!(set.full_vector(Combination::Pretest { alpha: 0.05 }).unwrap()[6], 0.0);
        assert_eq!(set.full_vector(Combination::Pretest { alpha: 0.5 }).unwrap()[6], 0.5);
        assert_eq!(set.beta1_ps.as_deref(), Some(&[0.5, 0.5][..]));
    }

    #[test]
    fn stein_unavailable_for_small_p2() {
        let set = from_fits(&[1.0, 2.0, 3.0], &[1.0, 0.0, 0.0], 1, wald(1.0, 2, 0.05), 0.05).unwrap();
        assert!(set.beta1_s.is_none() && set.beta1_ps.is_none());
        assert!(!set.stein_available());
        assert!(set.weight(Combination::Stein).is_err());
    }

    #[test]
    fn zero_statistic_gives_sub_model() {
        let set = from_fits(&[1.0, 0.0, 0.0, 0.0], &[0.5, 0.0, 0.0, 0.0], 1, wald(0.0, 3, 0.05), 0.05).unwrap();
        assert_eq!(set.beta1_s.as_deref(), Some(&[0.5][..]));
        assert_eq!(set.weight(Combination::Stein).unwrap(), 0.0);
    }

    proptest! {
        #[test]
        fn positive_stein_weight_in_unit_interval(wst in 1e-6f64..1e6, p2 in 3usize..20) {
            let g = positive_stein_weight(wst, p2).unwrap();
            prop_assert!((0.0..1.0).contains(&g));
        }

        #[test]
        fn stein_overshoots_iff_below_d(wst in 1e-6f64..100.0, p2 in 3usize..20) {
            let g = stein_weight(wst, p2).unwrap();
            prop_assert_eq!(g < 0.0, wst < (p2 - 2) as f64);
        }

        #[test]
        fn stein_lies_on_segment_line(a in -5f64..5.0, b in -5f64..5.0, wst in 0.1f64..50.0) {
            let fm = v(&[a, 1.0]);
            let sm = v(&[b, 1.0]);
            let s = stein(&fm, &sm, wst, 6).unwrap();
            prop_assert!((s[1] - 1.0).abs() < 1e-12);
            let g = stein_weight(wst, 6).unwrap();
            prop_assert!((s[0] - (b + g * (a - b))).abs() < 1e-9);
        }

        #[test]
        fn pretest_is_bitwise_one_input(a in -5f64..5.0, b in -5f64..5.0, wst in 0f64..30.0) {
            let fm = v(&[a]);
            let sm = v(&[b]);
            let w = wald(wst, 5, 0.05);
            let r1 = pretest(&fm, &sm, &w).unwrap();
            let r2 = pretest(&fm, &sm, &w).unwrap();
            prop_assert_eq!(&r1, &r2);
            prop_assert!(r1 == fm || r1 == sm);
        }
    }
}
