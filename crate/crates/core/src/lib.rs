//! Quantile regression with pretest and Stein-type shrinkage.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod data;
pub mod design;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod shrinkage;
pub mod sim;
pub mod solver;
pub mod special;

pub use design::{empirical_quantile, ls_fit, quantile_loss, LossSpec, PartitionedDesign, QuantileFit};
pub use error::{Error, Result};
pub use solver::{brute_force_fit, fit_full, fit_penalized, fit_submodel, PenaltyPath, SolverOptions};
pub use inference::{compute_partitions, wald_statistic, wald_test, DesignPartitions, WaldResult};
pub use shrinkage::{estimate_all, positive_stein, pretest, stein, Combination, ShrinkageSet};
pub use asymptotics::{bias_all, risk_all, risk_curve, AsymptoticScenario, Estimator, RiskCurve, RiskFormula};
pub use data::{condition_ratio, load_csv, outlier_test, real_data_study, standardize, Dataset, DatasetPreset, DiagnosticsReport, Scaling};
pub use sim::{mrme_sweep, run_study, EstimatorPlan, Metric, MetricRow, MetricsTable, SimConfig};
