use thiserror::Error;

/// Errors raised by the geometry, switching, Hamiltonian, dynamics and
/// variational layers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("points are at distance {distance} which is within the cut-locus guard band of radius {radius}")]
    CutLocus { distance: f64, radius: f64 },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("point outside the domain of chart {chart}")]
    ChartDomain { chart: String },

    #[error("invalid point: {0}")]
    InvalidPoint(String),

    #[error("unknown manifold id `{0}`")]
    UnknownManifold(String),

    #[error("invalid generator: {0}")]
    InvalidGenerator(String),

    #[error("generator has no unique invariant measure: {0}")]
    NoUniqueInvariant(String),

    #[error("numerical failure in {stage}: {detail}")]
    NumericalFailure { stage: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),
}

impl Error {
    pub(crate) fn numerical(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::NumericalFailure {
            stage,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
