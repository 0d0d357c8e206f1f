use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is indefinite beyond tolerance: min eigenvalue {min_eigenvalue:.6e} < -{tolerance:.3e} (eigenvalues {eigenvalues:?})")]
    IndefiniteBeyondTolerance {
        min_eigenvalue: f64,
        tolerance: f64,
        eigenvalues: Vec<f64>,
    },

    #[error("matrix exponential overflowed (norm {0:.3e})")]
    ExpOverflow(f64),

    #[error("Sylvester/Lyapunov operator is singular: {0}")]
    SingularSylvester(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("constraint set leaves no free parameters")]
    EmptyFreeSet,

    #[error("constraint map is rank deficient: {0}")]
    RankDeficientMap(String),

    #[error("trajectory too short: {0}")]
    TooShort(String),

    #[error("non-uniform sampling at index {0}")]
    NonUniformSampling(usize),

    #[error("insufficient lags: need {needed}, have {have}")]
    InsufficientLags { needed: usize, have: usize },

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("dynamics matrix is not dissipative: {0}")]
    UnstableA(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("reference tensor has zero norm")]
    ZeroReference,

    #[error("empty sample")]
    EmptySample,

    #[error("every gamma on the grid failed to fit")]
    AllFitsFailed,

    #[error("zero variance for calendar month {month} in column {column}")]
    ZeroMonthlyVariance { month: usize, column: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse {
            line: e.line(),
            message: e.to_string(),
        }
    }
}

impl Error {
    /// Stable variant name for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotSymmetric(_) => "NotSymmetric",
            Error::IndefiniteBeyondTolerance { .. } => "IndefiniteBeyondTolerance",
            Error::ExpOverflow(_) => "ExpOverflow",
            Error::SingularSylvester(_) => "SingularSylvester",
            Error::Singular(_) => "Singular",
            Error::EmptyFreeSet => "EmptyFreeSet",
            Error::RankDeficientMap(_) => "RankDeficientMap",
            Error::TooShort(_) => "TooShort",
            Error::NonUniformSampling(_) => "NonUniformSampling",
            Error::InsufficientLags { .. } => "InsufficientLags",
            Error::NonFiniteState { .. } => "NonFiniteState",
            Error::UnstableA(_) => "UnstableA",
            Error::InvalidParameter(_) => "InvalidParameter",
            Error::ZeroReference => "ZeroReference",
            Error::EmptySample => "EmptySample",
            Error::AllFitsFailed => "AllFitsFailed",
            Error::ZeroMonthlyVariance { .. } => "ZeroMonthlyVariance",
            Error::Parse { .. } => "Parse",
            Error::Io(_) => "Io",
        }
    }
}
