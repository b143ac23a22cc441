use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the analysis pipeline.
///
/// Every variant maps to a module-qualified code (see [`Error::code`]) and to
/// an exit-status class used by the command line front end.
#[derive(Debug, Error)]
pub enum Error {
    #[error("column {0} has zero variance (monomorphic SNP)")]
    ConstantColumn(usize),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("index ({i}, {j}) out of range for {p} SNPs")]
    IndexOutOfRange { i: usize, j: usize, p: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("SNP order mismatch: {0}")]
    OrderMismatch(String),
    #[error("degenerate regression at SNP {snp}: {reason}")]
    DegenerateRegression { snp: usize, reason: String },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("variational optimisation diverged at iteration {iteration}")]
    Diverged { iteration: usize },
    #[error("ill-conditioned design: column {column} is not finite")]
    IllConditioned { column: usize },
    #[error("rank-deficient eigen decomposition (rank {0})")]
    RankDeficient(usize),
    #[error("null block overlaps the analysis block: {0}")]
    BlockOverlap(String),
    #[error("instrument has zero norm")]
    ZeroInstrument,
    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("zero variance input: {0}")]
    ZeroVariance(String),
    #[error("no causal genes among the observed predictions")]
    NoPositives,
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}: missing column(s) {missing}")]
    Schema { path: String, missing: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

/// Exit status classes used by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Module-qualified error code, e.g. `linalg::ConstantColumn`.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ConstantColumn(_) => "linalg::ConstantColumn",
            Error::NumericalFailure(_) => "linalg::NumericalFailure",
            Error::IndexOutOfRange { .. } => "linalg::IndexOutOfRange",
            Error::ShapeMismatch(_) => "linalg::ShapeMismatch",
            Error::OrderMismatch(_) => "sumstats::OrderMismatch",
            Error::DegenerateRegression { .. } => "sumstats::DegenerateRegression",
            Error::ConfigInvalid(_) => "simulate::ConfigInvalid",
            Error::Diverged { .. } => "ssvi::Diverged",
            Error::IllConditioned { .. } => "ssvi::IllConditioned",
            Error::RankDeficient(_) => "factorize::RankDeficient",
            Error::BlockOverlap(_) => "factorize::BlockOverlap",
            Error::ZeroInstrument => "baselines::ZeroInstrument",
            Error::DegenerateDesign(_) => "baselines::DegenerateDesign",
            Error::ZeroVariance(_) => "baselines::ZeroVariance",
            Error::NoPositives => "bench::NoPositives",
            Error::Parse { .. } => "cli::ParseError",
            Error::Schema { .. } => "cli::SchemaError",
            Error::Io { .. } => "cli::IoError",
            Error::Json(_) => "cli::JsonError",
            Error::Usage(_) => "cli::UsageError",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NumericalFailure(_)
            | Error::Diverged { .. }
            | Error::IllConditioned { .. }
            | Error::RankDeficient(_) => ErrorClass::Numerical,
            Error::ConfigInvalid(_) | Error::Usage(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}
