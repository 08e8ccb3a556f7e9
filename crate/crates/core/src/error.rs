use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad failure class, used by the command-line front end to pick an exit
/// status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid monitoring schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("no patient contributes weight to strategy {strategy}")]
    EmptyStrategyCell { strategy: String },

    #[error("initial arm {arm} has {count} patient(s); at least 2 are needed for a variance")]
    DegenerateVariance { arm: String, count: usize },

    #[error("covariance has already been inflated")]
    AlreadyInflated,

    #[error("n = {n} does not exceed the parameter count p = {p}")]
    NonPositiveDf { n: usize, p: usize },

    #[error("matrix is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NonSymmetric { asymmetry: f64 },

    #[error("bisection did not converge in {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("series not converged after {terms} terms (last relative term {last_relative:.3e})")]
    SeriesNotConverged { terms: usize, last_relative: f64 },

    #[error("series approximation supports exactly two looks, got {looks}")]
    SeriesUnsupported { looks: usize },

    #[error("target power not reached below the sample size cap {cap}")]
    NotAchievable { cap: usize },

    #[error("zero standard error when comparing {first} with {second}")]
    DegenerateComparison { first: String, second: String },

    #[error("design has no control arm")]
    NoControlArm,

    #[error("line {line}: {message}")]
    DataFormat { line: u64, message: String },

    #[error("configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    File { path: std::path::PathBuf, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Attach the offending path to an I/O failure.
    pub fn file(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::File { path: path.to_path_buf(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_)
            | Error::InvalidSchedule(_)
            | Error::SeriesUnsupported { .. }
            | Error::Config(_) => ErrorClass::Usage,
            Error::InvalidDesign(_)
            | Error::InvalidScenario(_)
            | Error::DimensionMismatch(_)
            | Error::InvalidRecord { .. }
            | Error::EmptyStrategyCell { .. }
            | Error::DegenerateVariance { .. }
            | Error::NoControlArm
            | Error::DataFormat { .. }
            | Error::File { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => ErrorClass::Data,
            Error::AlreadyInflated
            | Error::NonPositiveDf { .. }
            | Error::NonSymmetric { .. }
            | Error::NoConvergence { .. }
            | Error::SeriesNotConverged { .. }
            | Error::NotAchievable { .. }
            | Error::DegenerateComparison { .. } => ErrorClass::Numerical,
        }
    }
}
