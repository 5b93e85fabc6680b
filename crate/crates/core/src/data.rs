//! Real-data plumbing: CSV ingestion, standardization, multicollinearity and
//! outlier diagnostics, and the bootstrap comparison of estimators by test
//! mean absolute deviation.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{ls_coefficients, PartitionedDesign};
use crate::error::{Error, Result, StageExt};
use crate::linalg::check_full_column_rank;
use crate::sim::{
    fit_estimators, generate_design, mean, pmad, replication_rng, sd, with_intercept, EstimatorPlan, Metric, MetricRow,
    MetricsTable, Tuning,
};
use crate::solver::SolverOptions;
use crate::special::student_t_two_sided;

/// A numeric dataset with a designated response and a designated block of
/// candidate-irrelevant covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// Covariate names, in the column order of `x`.
    pub column_names: Vec<String>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub response_column: String,
    /// Covariates forming the restricted block.
    pub partition_spec: Vec<String>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        column_names: Vec<String>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        response_column: impl Into<String>,
        partition_spec: Vec<String>,
    ) -> Result<Self> {
        let d = Self {
            name: name.into(),
            column_names,
            x,
            y,
            response_column: response_column.into(),
            partition_spec,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if self.x.ncols() != self.column_names.len() {
            return Err(Error::Format(format!(
                "{} covariate names for {} columns",
                self.column_names.len(),
                self.x.ncols()
            )));
        }
        if self.x.nrows() != self.y.len() {
            return Err(Error::Format(format!("{} rows but {} responses", self.x.nrows(), self.y.len())));
        }
        if self.column_names.contains(&self.response_column) {
            return Err(Error::Format(format!("response `{}` is also a covariate", self.response_column)));
        }
        for (k, c) in self.partition_spec.iter().enumerate() {
            if !self.column_names.contains(c) {
                return Err(Error::MissingColumn(c.clone()));
            }
            if self.partition_spec[..k].contains(c) {
                return Err(Error::Format(format!("column `{c}` listed twice in the partition")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Indices of the unrestricted covariates followed by the restricted ones.
    pub fn partition_order(&self) -> Vec<usize> {
        let is_p2 = |j: &usize| self.partition_spec.contains(&self.column_names[*j]);
        let mut order: Vec<usize> = (0..self.column_names.len()).filter(|j| !is_p2(j)).collect();
        order.extend(self.partition_spec.iter().map(|c| self.column_names.iter().position(|n| n == c).unwrap()));
        order
    }

    pub fn p2(&self) -> usize {
        self.partition_spec.len()
    }

    /// Partitioned design with an intercept and the covariates in partition order.
    pub fn design(&self, tau: f64) -> Result<PartitionedDesign> {
        let order = self.partition_order();
        let p2 = self.p2();
        let x = with_intercept(&self.x.select_columns(&order));
        PartitionedDesign::new(x, self.y.clone(), tau, order.len() - p2 + 1, p2)
    }
}

/// Column schema of a known dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPreset {
    pub name: String,
    pub response: String,
    pub covariates: Vec<String>,
    pub partition: Vec<String>,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl DatasetPreset {
    pub fn prostate() -> Self {
        Self {
            name: "prostate".into(),
            response: "lpsa".into(),
            covariates: strings(&["lcavol", "lweight", "age", "lbph", "svi", "lcp", "gleason", "pgg45"]),
            partition: strings(&["age", "lbph", "lcp", "gleason", "pgg45"]),
        }
    }

    /// Column names follow the growth-regression export (`y.net` is the GDP growth response).
    pub fn barro() -> Self {
        Self {
            name: "barro".into(),
            response: "y.net".into(),
            covariates: strings(&[
                "lgdp2", "mse2", "fse2", "fhe2", "mhe2", "lexp2", "lintr2", "gedy2", "Iy2", "gcony2", "lblakp2", "pol2",
                "ttrad2",
            ]),
            partition: strings(&["mse2", "fse2", "fhe2", "mhe2", "lintr2", "gedy2", "pol2"]),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "prostate" => Some(Self::prostate()),
            "barro" => Some(Self::barro()),
            _ => None,
        }
    }

    pub fn load(&self, path: &Path) -> Result<Dataset> {
        load_csv_columns(path, &self.response, &self.partition, Some(&self.covariates)).map(|mut d| {
            d.name = self.name.clone();
            d
        })
    }
}

/// Reads a headered numeric CSV; every column except the response is a covariate.
pub fn load_csv(path: &Path, response_column: &str, partition_spec: &[String]) -> Result<Dataset> {
    load_csv_columns(path, response_column, partition_spec, None)
}

/// As [`load_csv`], keeping only `covariates` (in that order) when given.
pub fn load_csv_columns(
    path: &Path,
    response_column: &str,
    partition_spec: &[String],
    covariates: Option<&[String]>,
) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(&text, &name, response_column, partition_spec, covariates)
}

pub fn parse_csv(
    text: &str,
    name: &str,
    response_column: &str,
    partition_spec: &[String],
    covariates: Option<&[String]>,
) -> Result<Dataset> {
    if text.trim().is_empty() {
        return Err(Error::Format("empty file".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("bad header: {e}")))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let find = |c: &str| header.iter().position(|h| h == c).ok_or_else(|| Error::MissingColumn(c.to_string()));
    let yi = find(response_column)?;
    let names: Vec<String> = match covariates {
        Some(cs) => cs.to_vec(),
        None => header.iter().filter(|h| *h != response_column).cloned().collect(),
    };
    let idx = names.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    for c in partition_spec {
        find(c)?;
    }

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::Format(format!("record {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!("record {row} has {} fields, header has {}", rec.len(), header.len())));
        }
        let cell = |k: usize| -> Result<f64> {
            let s = &rec[k];
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                row,
                column: header[k].clone(),
                detail: format!("`{s}` is not a finite number"),
            })
        };
        ys.push(cell(yi)?);
        for &k in &idx {
            xs.push(cell(k)?);
        }
    }
    if ys.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(ys.len(), names.len(), &xs);
    Dataset::new(name, names, x, DVector::from_vec(ys), response_column, partition_spec.to_vec())
}

/// Column-wise centring and scaling learned on a training block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl Scaling {
    /// Sample mean and standard deviation (denominator `n - 1`) per column.
    pub fn fit(x: &DMatrix<f64>, names: Option<&[String]>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InsufficientData("standardizing needs at least two rows".into()));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut sds = Vec::with_capacity(x.ncols());
        for (j, col) in x.column_iter().enumerate() {
            let m = col.sum() / n as f64;
            let v = col.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / (n - 1) as f64;
            let s = v.sqrt();
            if !(s > 1e-12 * (1.0 + m.abs())) {
                let name = names.and_then(|nm| nm.get(j)).cloned().unwrap_or_else(|| format!("#{j}"));
                return Err(Error::Degenerate(format!("column `{name}` has zero variance")));
            }
            means.push(m);
            sds.push(s);
        }
        Ok(Self { means, sds })
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.means[j]) / self.sds[j])
    }

    /// Maps `(intercept, slopes)` fitted on standardized columns back to the
    /// raw scale.
    pub fn back_transform(&self, intercept: f64, slopes: &[f64]) -> (f64, Vec<f64>) {
        let raw: Vec<f64> = slopes.iter().zip(&self.sds).map(|(b, s)| b / s).collect();
        let shift: f64 = raw.iter().zip(&self.means).map(|(b, m)| b * m).sum();
        (intercept - shift, raw)
    }
}

/// Standardizes every covariate to mean 0 and unit sample variance.
pub fn standardize(data: &Dataset) -> Result<(Dataset, Scaling)> {
    let sc = Scaling::fit(&data.x, Some(&data.column_names))?;
    let mut out = data.clone();
    out.x = sc.apply(&data.x);
    Ok((out, sc))
}

/// Ratio of the extreme eigenvalues of `X'X`.
pub fn condition_ratio(x: &DMatrix<f64>) -> Result<f64> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(Error::domain("empty matrix"));
    }
    let eig = SymmetricEigen::new(x.tr_mul(x)).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > hi * 1e-14) {
        return Err(Error::SingularDesign {
            columns: (0..x.ncols()).collect(),
            detail: format!("X'X is singular; condition ratio is infinite (eigenvalues {lo:e} .. {hi:e})"),
        });
    }
    Ok(hi / lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// Condition ratio of the standardized covariates.
    pub condition_ratio: f64,
    /// Flagged observations, 1-based.
    pub outlier_indices: Vec<usize>,
    pub studentized_residuals: Vec<f64>,
    pub bonferroni_p: Vec<f64>,
}

/// Externally studentized least-squares residuals (intercept included) with
/// Bonferroni-adjusted two-sided t p-values; flags those below 0.05.
pub fn outlier_test(data: &Dataset) -> Result<DiagnosticsReport> {
    let x = with_intercept(&data.x);
    let (n, p) = x.shape();
    if n < p + 2 {
        return Err(Error::domain(format!("outlier test needs n > p + 1 (n = {n}, p = {p})")));
    }
    let beta = ls_coefficients(&x, &data.y)?;
    let e = &data.y - &x * &beta;
    let xtx_inv = crate::linalg::spd_inverse(&x.tr_mul(&x), "X'X")?;
    let rss = e.norm_squared();
    let dof = (n - p - 1) as f64;
    let mut t = Vec::with_capacity(n);
    let mut adj = Vec::with_capacity(n);
    for i in 0..n {
        let xi = x.row(i).transpose();
        let h = (xi.transpose() * &xtx_inv * &xi)[(0, 0)];
        let one_h = (1.0 - h).max(f64::EPSILON);
        let s2 = ((rss - e[i] * e[i] / one_h) / dof).max(f64::MIN_POSITIVE);
        let ti = e[i] / (s2 * one_h).sqrt();
        t.push(ti);
        adj.push((n as f64 * student_t_two_sided(ti, dof)).min(1.0));
    }
    let outlier_indices = (0..n).filter(|&i| adj[i] < 0.05).map(|i| i + 1).collect();
    let (std, _) = standardize(data)?;
    Ok(DiagnosticsReport {
        condition_ratio: condition_ratio(&std.x)?,
        outlier_indices,
        studentized_residuals: t,
        bonferroni_p: adj,
    })
}

/// Share of a training half used to fit the penalty path; the rest picks lambda.
const INNER_FIT_SHARE: f64 = 2.0 / 3.0;
const MAX_REDRAWS: usize = 100;

struct Resample {
    train: Vec<usize>,
    test: Vec<usize>,
}

fn usable(data: &Dataset, order: &[usize], rows: &[usize], n_fit: usize) -> bool {
    let x = data.x.select_rows(rows);
    let Ok(sc) = Scaling::fit(&x, None) else {
        return false;
    };
    let z = with_intercept(&sc.apply(&x).select_columns(order));
    check_full_column_rank(&z).is_ok() && check_full_column_rank(&z.rows(0, n_fit).clone_owned()).is_ok()
}

/// Rows drawn with replacement, split evenly into training and test halves.
/// Draws whose training half is rank deficient are redrawn.
fn draw_resample(data: &Dataset, order: &[usize], seed: u64, rep: usize) -> Result<Resample> {
    let n = data.n();
    let mut rng = replication_rng(seed, rep);
    let half = n / 2;
    let n_fit = inner_fit(half);
    for _ in 0..MAX_REDRAWS {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        if usable(data, order, &rows[..half], n_fit) {
            return Ok(Resample { train: rows[..half].to_vec(), test: rows[half..].to_vec() });
        }
    }
    Err(Error::Degenerate(format!("no full-rank training half in {MAX_REDRAWS} resamples")))
}

fn inner_fit(n_train: usize) -> usize {
    (n_train as f64 * INNER_FIT_SHARE).round() as usize
}

/// Per bootstrap replicate: resample rows, standardize on the training half,
/// fit every estimator at each quantile level and the least-squares
/// baseline, and record the test mean absolute deviation. Penalties are tuned
/// on an inner split of the training half.
pub fn real_data_study(data: &Dataset, tau_grid: &[f64], bootstrap_reps: usize, seed: u64) -> Result<MetricsTable> {
    real_data_study_with(data, tau_grid, bootstrap_reps, seed, &EstimatorPlan::default(), &SolverOptions::default())
}

pub fn real_data_study_with(
    data: &Dataset,
    tau_grid: &[f64],
    bootstrap_reps: usize,
    seed: u64,
    plan: &EstimatorPlan,
    options: &SolverOptions,
) -> Result<MetricsTable> {
    if tau_grid.is_empty() || tau_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::domain("quantile levels must lie in (0, 1)"));
    }
    if bootstrap_reps == 0 {
        return Err(Error::domain("need at least one bootstrap replicate"));
    }
    let order = data.partition_order();
    let p2 = data.p2();
    let p1 = order.len() - p2 + 1;
    let labels = plan.labels(p2);
    let outcomes: Vec<(Vec<Vec<f64>>, f64)> = (0..bootstrap_reps)
        .into_par_iter()
        .map(|rep| {
            let rs = draw_resample(data, &order, seed, rep)?;
            let xt_raw = data.x.select_rows(&rs.train);
            let yt = DVector::from_fn(rs.train.len(), |i, _| data.y[rs.train[i]]);
            let xs_raw = data.x.select_rows(&rs.test);
            let ys = DVector::from_fn(rs.test.len(), |i, _| data.y[rs.test[i]]);
            let sc = Scaling::fit(&xt_raw, Some(&data.column_names))?;
            let xt = with_intercept(&sc.apply(&xt_raw).select_columns(&order));
            let xs = with_intercept(&sc.apply(&xs_raw).select_columns(&order));
            let mut per_tau = Vec::with_capacity(tau_grid.len());
            for &tau in tau_grid {
                let design = PartitionedDesign::new(xt.clone(), yt.clone(), tau, p1, p2)?;
                let tuning = Tuning::InnerSplit { n_fit: inner_fit(rs.train.len()) };
                let fits = fit_estimators(&design, plan, Some(tuning), options).stage(format!("tau = {tau}"))?;
                per_tau.push(fits.iter().map(|b| pmad(b, &xs, &ys)).collect::<Result<Vec<_>>>()?);
            }
            let ls = ls_coefficients(&xt, &yt).stage("least squares")?;
            Ok((per_tau, pmad(&ls, &xs, &ys)?))
        })
        .enumerate()
        .map(|(rep, r)| r.stage(format!("replicate {rep}")))
        .collect::<Result<_>>()?;

    let summary = |v: &[f64]| -> (f64, f64) {
        let se = if v.len() > 1 { sd(v) / (v.len() as f64).sqrt() } else { 0.0 };
        (mean(v), se)
    };
    let mut table = MetricsTable::default();
    for (t, &tau) in tau_grid.iter().enumerate() {
        for (e, label) in labels.iter().enumerate() {
            let v: Vec<f64> = outcomes.iter().map(|o| o.0[t][e]).collect();
            let (value, se) = summary(&v);
            table.rows.push(MetricRow { tau: Some(tau), estimator: label.clone(), metric: Metric::Pmad, value, se, delta_star: None });
        }
    }
    let v: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let (value, se) = summary(&v);
    table.rows.push(MetricRow { tau: None, estimator: "LSE".into(), metric: Metric::Pmad, value, se, delta_star: None });
    Ok(table)
}

/// Stand-in for the canonical datasets: `n` rows of eight AR(0.5)-correlated
/// covariates, three of them active, with the last five as the restricted block.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = replication_rng(seed, 0);
    let x = generate_design(n, 8, 0.5, &mut rng)?;
    let beta = DVector::from_vec(vec![0.6, 0.3, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let noise = DVector::from_vec(crate::sim::sample_errors(crate::sim::ErrorDist::Normal, n, &mut rng));
    let y = &x * beta + noise * 0.7 + DVector::from_element(n, 2.5);
    let names: Vec<String> = (1..=8).map(|j| format!("x{j}")).collect();
    let partition = names[3..].to_vec();
    Dataset::new("synthetic", names, x, y, "y", partition)
}
