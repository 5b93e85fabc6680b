//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Numerical rank test. Fails with the set of columns that participate in the
/// numerical null space when `x` is rank deficient.
///
/// Tolerance is `max(n, p) * eps * sigma_max`.
pub fn check_full_column_rank(x: &DMatrix<f64>) -> Result<()> {
    let (n, p) = x.shape();
    if p == 0 {
        return Err(Error::domain("design has no columns"));
    }
    if n < p {
        return Err(Error::SingularDesign {
            columns: (0..p).collect(),
            detail: format!("{n} rows cannot support {p} columns"),
        });
    }
    let svd = x.clone().svd(false, true);
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = n.max(p) as f64 * f64::EPSILON * smax;
    if smax == 0.0 || sv.iter().all(|&s| s > tol) {
        if smax == 0.0 {
            return Err(Error::SingularDesign {
                columns: (0..p).collect(),
                detail: "all-zero design".into(),
            });
        }
        return Ok(());
    }
    let v_t = svd.v_t.expect("requested V^T");
    let mut cols = Vec::new();
    for (k, &s) in sv.iter().enumerate() {
        if s <= tol {
            for j in 0..p {
                if v_t[(k, j)].abs() > 1e-8 && !cols.contains(&j) {
                    cols.push(j);
                }
            }
        }
    }
    cols.sort_unstable();
    Err(Error::SingularDesign {
        columns: cols,
        detail: format!("numerical rank below {p} (tolerance {tol:e})"),
    })
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularDesign {
        columns: (0..m.ncols()).collect(),
        detail: format!("{what} is not positive definite"),
    })?;
    Ok(chol.inverse())
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = m.clone().cholesky().ok_or_else(|| Error::SingularDesign {
        columns: (0..m.ncols()).collect(),
        detail: format!("{what} is not positive definite"),
    })?;
    Ok(chol.solve(b))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix (eigenvalues below a
/// relative cutoff are treated as zero).
pub fn sym_pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let cut = lmax * 1e-12 * m.nrows() as f64;
    let inv: DVector<f64> = eig
        .eigenvalues
        .map(|l| if l.abs() > cut { 1.0 / l } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose()
}

/// `X' X`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x)
}

/// Copies the listed columns into a new matrix.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Copies the listed rows into a new matrix.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
