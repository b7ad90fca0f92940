use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Variant names double as the machine-readable error identifiers written
/// by the command-line front end, so renaming one is a format change.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("row {row} of the kernel sums to {sum}, not 1")]
    NonStochastic { row: usize, sum: f64 },
    #[error("kernel entry ({row}, {col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("stationary law is not unique: {count} eigenvalues within tolerance of 1")]
    ReducibleChain { count: usize },
    #[error("no spectral gap: second eigenvalue modulus {modulus}")]
    NoSpectralGap { modulus: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weight entry {index} = {value} is below 1")]
    WeightBelowOne { index: usize, value: f64 },
    #[error("linear system is numerically singular: {0}")]
    SingularSystem(String),
    #[error("asymptotic variance is zero or numerically degenerate")]
    DegenerateVariance,
    #[error("dominant eigenvalue not separated at t = {t}: gap {gap}")]
    AmbiguousDominant { t: f64, gap: f64 },
    #[error("eigenvector normalization failed at t = {t}")]
    NormalizationFailure { t: f64 },
    #[error("contour passes too close to an eigenvalue (condition {condition:e})")]
    EigenvalueOnContour { condition: f64 },
    #[error("contour encloses {enclosed} eigenvalues instead of 1")]
    EnclosureViolation { enclosed: i64 },
    #[error("resolvent is singular at the requested point")]
    SingularResolvent,
    #[error("Fourier kernel fails to contract at t = {t}: kappa {kappa}")]
    ContractionFailure { t: f64, kappa: f64 },
    #[error("no power up to {max_power} halves the centered kernel norm")]
    NoContractingPower { max_power: usize },
    #[error("path state {index} is outside the state space of size {states}")]
    IndexOutOfRange { index: usize, states: usize },
    #[error("initial law is not a probability vector: {0}")]
    BadInitialLaw(String),
    #[error("sampler failure: {0}")]
    SamplerFailure(String),
    #[error("need at least {required} paths, got {got}")]
    TooFewPaths { required: usize, got: usize },
    #[error("observable does not live on a lattice")]
    NoLattice,
    #[error("exact distribution needs {cells} cells, budget is {budget}")]
    BudgetExceeded { cells: u128, budget: u128 },
    #[error("need at least {required} samples, got {got}")]
    TooFewSamples { required: usize, got: usize },
    #[error("spectral gap lost at u = {u}")]
    SpectralGapLost { u: f64 },
    #[error("distance at index {index} is not positive")]
    NonPositiveDistance { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("i/o failure: {0}")]
    IoFailure(String),
}

impl Error {
    /// Stable identifier used in error records.
    pub fn name(&self) -> &'static str {
        match self {
            Error::NonStochastic { .. } => "NonStochastic",
            Error::NegativeEntry { .. } => "NegativeEntry",
            Error::ReducibleChain { .. } => "ReducibleChain",
            Error::NoSpectralGap { .. } => "NoSpectralGap",
            Error::DimensionMismatch { .. } => "DimensionMismatch",
            Error::WeightBelowOne { .. } => "WeightBelowOne",
            Error::SingularSystem(_) => "SingularSystem",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::AmbiguousDominant { .. } => "AmbiguousDominant",
            Error::NormalizationFailure { .. } => "NormalizationFailure",
            Error::EigenvalueOnContour { .. } => "EigenvalueOnContour",
            Error::EnclosureViolation { .. } => "EnclosureViolation",
            Error::SingularResolvent => "SingularResolvent",
            Error::ContractionFailure { .. } => "ContractionFailure",
            Error::NoContractingPower { .. } => "NoContractingPower",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::BadInitialLaw(_) => "BadInitialLaw",
            Error::SamplerFailure(_) => "SamplerFailure",
            Error::TooFewPaths { .. } => "TooFewPaths",
            Error::NoLattice => "NoLattice",
            Error::BudgetExceeded { .. } => "BudgetExceeded",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::SpectralGapLost { .. } => "SpectralGapLost",
            Error::NonPositiveDistance { .. } => "NonPositiveDistance",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ConfigInvalid(_) => "ConfigInvalid",
            Error::IoFailure(_) => "IoFailure",
        }
    }

    /// Validation errors map to exit status 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::ConfigInvalid(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
