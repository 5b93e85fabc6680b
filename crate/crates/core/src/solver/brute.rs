//! Exhaustive vertex enumeration: an exact oracle for small problems.

use nalgebra::{DMatrix, DVector};

use crate::design::{PartitionedDesign, QuantileFit};
use crate::error::{Error, Result};

pub const MAX_N: usize = 15;
pub const MAX_P: usize = 4;

/// Next `k`-combination of `0..n` in lexicographic order.
fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Enumerates every `p`-subset of observations, interpolates it exactly and
/// keeps the subset with the smallest check loss. Ties go to the
/// lexicographically smallest subset.
pub fn brute_force_fit(design: &PartitionedDesign) -> Result<QuantileFit> {
    let (n, p) = (design.n(), design.p());
    if n > MAX_N || p > MAX_P {
        return Err(Error::TooLarge { n, p, max_n: MAX_N, max_p: MAX_P });
    }
    let x = design.x();
    let y = design.y();
    let loss = design.loss();
    let mut idx: Vec<usize> = (0..p).collect();
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut visited = 0usize;
    loop {
        visited += 1;
        let xh = DMatrix::from_fn(p, p, |a, b| x[(idx[a], b)]);
        let sv = xh.singular_values();
        if sv.min() > 1e-12 * sv.max() {
            let yh = DVector::from_fn(p, |a, _| y[idx[a]]);
            if let Some(beta) = xh.lu().solve(&yh) {
                let obj = loss.total((y - x * &beta).iter());
                let better = match &best {
                    None => true,
                    Some((b, _)) => obj < *b - 1e-12 * b.abs().max(1.0),
                };
                if better {
                    best = Some((obj, beta));
                }
            }
        }
        if !next_combination(&mut idx, n) {
            break;
        }
    }
    let (_, beta) = best.ok_or_else(|| Error::SingularDesign {
        columns: (0..p).collect(),
        detail: "every p-subset of observations is singular".into(),
    })?;
    Ok(QuantileFit::from_beta(design, beta, visited))
}
