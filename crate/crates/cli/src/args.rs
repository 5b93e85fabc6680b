use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qrshrink", version, about = "Quantile regression with pretest and Stein-type shrinkage")]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table, global = true)]
    pub format: Format,
    /// Write the result here (atomically) instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Full-model quantile regression coefficients.
    Fit(FitArgs),
    /// Wald test of the restricted block.
    Test(TestArgs),
    /// Full, sub-model, pretest, Stein and positive-part Stein estimates.
    Shrink(TestArgs),
    /// Ridge / lasso / elastic-net coefficient path.
    Path(PathArgs),
    /// Monte Carlo comparison study.
    Simulate(SimulateArgs),
    /// Relative median model error against the size of the violation.
    MrmeSweep(SweepArgs),
    /// Asymptotic bias and risk curves over the noncentrality.
    RiskCurve(RiskArgs),
    /// Diagnostics and bootstrap comparison on a real dataset.
    Analyze(AnalyzeArgs),
    /// Prints the JSON schema of a subcommand's `--format json` output.
    Schema(SchemaArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Headered numeric CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Covariates to use (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Do not add an intercept column.
    #[arg(long)]
    pub no_intercept: bool,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    /// Covariates forming the restricted block.
    #[arg(long, value_delimiter = ',', conflicts_with = "p2")]
    pub partition: Option<Vec<String>>,
    /// Size of the restricted block, taken as the last covariates.
    #[arg(long)]
    pub p2: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub tau: f64,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub partition: PartitionArgs,
    #[arg(long)]
    pub tau: f64,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub tau: f64,
    /// Elastic-net mix: 0 ridge, 1 lasso.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 100)]
    pub nlambda: usize,
    /// Smallest lambda as a fraction of the largest.
    #[arg(long, default_value_t = 1e-3)]
    pub lambda_ratio: f64,
    /// Explicit decreasing lambda values.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// SimConfig JSON.
    #[arg(long, conflicts_with = "example")]
    pub config: Option<PathBuf>,
    /// Built-in comparison example (1 or 2).
    #[arg(long)]
    pub example: Option<u8>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Quantile levels (comma list or start:stop:step).
    #[arg(long)]
    pub tau: Option<String>,
    #[arg(long)]
    pub error_dist: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// SimConfig JSON; otherwise built from the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub p1: usize,
    #[arg(long, default_value_t = 5)]
    pub p2: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value = "0.5")]
    pub tau: String,
    #[arg(long, default_value = "normal")]
    pub error_dist: String,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Violation sizes, start:stop:step or a comma list, starting at 0.
    #[arg(long, default_value = "0:2:0.2")]
    pub grid: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormulaArg {
    Consistent,
    AsPrinted,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub p1: usize,
    #[arg(long)]
    pub p2: usize,
    /// Pretest level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Noncentrality values, start:stop:step or a comma list.
    #[arg(long)]
    pub grid: String,
    /// Correlation of the autoregressive design limit.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Scale `w` of the limiting distribution.
    #[arg(long, default_value_t = 1.0)]
    pub w: f64,
    #[arg(long, value_enum, default_value_t = FormulaArg::Consistent)]
    pub formula: FormulaArg,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Headered numeric CSV.
    #[arg(long, required_unless_present = "synthetic")]
    pub input: Option<PathBuf>,
    /// Known column schema: prostate or barro.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub partition: Option<Vec<String>>,
    /// Run on a generated stand-in with this many rows instead of a file.
    #[arg(long, conflicts_with = "input")]
    pub synthetic: Option<usize>,
    /// Quantile levels (comma list or start:stop:step).
    #[arg(long, default_value = "0.1:0.9:0.1")]
    pub tau: String,
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the diagnostics report (JSON) here.
    #[arg(long)]
    pub diagnostics_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SchemaArgs {
    /// Subcommand name.
    pub name: String,
}
