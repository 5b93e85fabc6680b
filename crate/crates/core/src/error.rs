use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The design (or a sub-block of it) is numerically rank deficient.
    #[error("singular design: columns {columns:?} are linearly dependent ({detail})")]
    SingularDesign { columns: Vec<usize>, detail: String },

    /// An iterative solver hit its iteration limit. Carries the last iterate.
    #[error("solver did not converge after {iterations} iterations (last gap {gap:e})")]
    NonConvergence {
        iterations: usize,
        gap: f64,
        last_beta: Vec<f64>,
    },

    /// Too few observations for the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The data are degenerate for the requested statistic (e.g. all residuals equal).
    #[error("degenerate: {0}")]
    Degenerate(String),

    /// A moment of the (noncentral) chi-square that does not exist was requested.
    #[error("divergent moment: E[chi^(-2j)] with j = {j} needs more than {needed} degrees of freedom, got {dof}")]
    DivergentMoment { dof: usize, j: usize, needed: usize },

    /// Combinatorial guard of the exhaustive oracle.
    #[error("brute-force oracle limited to n <= {max_n} and p <= {max_p} (got n = {n}, p = {p})")]
    TooLarge {
        n: usize,
        p: usize,
        max_n: usize,
        max_p: usize,
    },

    /// A named column was not found in a dataset.
    #[error("missing column `{0}`")]
    MissingColumn(String),

    /// Input file could not be parsed.
    #[error("parse error at row {row}, column `{column}`: {detail}")]
    Parse {
        row: usize,
        column: String,
        detail: String,
    },

    /// Input file is structurally invalid.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),

    /// Error from a labeled pipeline stage (e.g. "full fit", "replication 17/wald").
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// Wraps the error with a stage label.
    pub fn at(self, stage: impl Into<String>) -> Self {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// Short machine-parsable category of the innermost error.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::SingularDesign { .. } => "singular-design",
            Error::NonConvergence { .. } => "non-convergence",
            Error::InsufficientData(_) => "insufficient-data",
            Error::Degenerate(_) => "degenerate",
            Error::DivergentMoment { .. } => "divergent-moment",
            Error::TooLarge { .. } => "too-large",
            Error::MissingColumn(_) => "missing-column",
            Error::Parse { .. } => "parse",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Stage { source, .. } => source.category(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Extension for labeling the stage an error came from.
pub trait StageExt<T> {
    fn stage(self, label: impl Into<String>) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, label: impl Into<String>) -> Result<T> {
        self.map_err(|e| e.at(label))
    }
}
