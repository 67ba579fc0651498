use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("check covariance is singular or not positive definite (reciprocal condition {rcond:.3e})")]
    SingularCheckCovariance { rcond: f64 },

    #[error("residual variance is not strictly positive: the checks predict the estimator exactly")]
    DegenerateResidualVariance,

    #[error("check covariance is not symmetric (max relative asymmetry {asymmetry:.3e})")]
    AsymmetricCovariance { asymmetry: f64 },

    #[error("baseline variance must be positive and finite, got {0}")]
    InvalidBaselineVariance(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("misspecification bound must be non-negative and finite, got {0}")]
    NegativeMu(f64),

    #[error("too few observations: {found} rows for {required} required")]
    TooFewObservations { found: usize, required: usize },

    #[error("too few clusters: {found} clusters for {required} required")]
    TooFewClusters { found: usize, required: usize },

    #[error("treatment arm {arm} has {size} observations; at least 2 are required")]
    EmptyArm { arm: u8, size: usize },

    #[error("regression design is rank deficient (column {column})")]
    RankDeficientDesign { column: usize },

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("reporting rule is degenerate: pilot pass rate {pass_rate:.4}")]
    DegenerateRule { pass_rate: f64 },

    #[error("influence function has zero norm on the calibration sample")]
    ZeroInfluence,

    #[error("perturbation weights leave (0, 2): max |s|/sqrt(n) = {ratio:.4}")]
    WeightUnderflow { ratio: f64 },

    #[error("misspecification score violates its bound: {0}")]
    InvalidScore(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-binary treatment value `{value}` on row {row}")]
    NonBinaryTreatment { row: usize, value: String },

    #[error("non-finite or unparsable value `{value}` in column `{column}` on row {row}")]
    NonFiniteValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("input file has no data rows")]
    EmptyFile,

    #[error("unknown lab `{0}`")]
    UnknownLab(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for bad input or configuration, 3 for numerical
    /// and validation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::MissingColumn(_)
            | Error::NonBinaryTreatment { .. }
            | Error::NonFiniteValue { .. }
            | Error::EmptyFile
            | Error::UnknownLab(_)
            | Error::InvalidConfig(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Io(_)
            | Error::DimensionMismatch { .. } => 2,
            _ => 3,
        }
    }

    /// Stable machine-readable name of the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::SingularCheckCovariance { .. } => "SingularCheckCovariance",
            Error::DegenerateResidualVariance => "DegenerateResidualVariance",
            Error::AsymmetricCovariance { .. } => "AsymmetricCovariance",
            Error::InvalidBaselineVariance(_) => "InvalidBaselineVariance",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::NegativeMu(_) => "NegativeMu",
            Error::TooFewObservations { .. } => "TooFewObservations",
            Error::TooFewClusters { .. } => "TooFewClusters",
            Error::EmptyArm { .. } => "EmptyArm",
            Error::RankDeficientDesign { .. } => "RankDeficientDesign",
            Error::DomainError(_) => "DomainError",
            Error::DegenerateRule { .. } => "DegenerateRule",
            Error::ZeroInfluence => "ZeroInfluence",
            Error::WeightUnderflow { .. } => "WeightUnderflow",
            Error::InvalidScore(_) => "InvalidScore",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NonBinaryTreatment { .. } => "NonBinaryTreatment",
            Error::NonFiniteValue { .. } => "NonFiniteValue",
            Error::EmptyFile => "EmptyFile",
            Error::UnknownLab(_) => "UnknownLab",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
            Error::Io(_) => "Io",
        }
    }
}
