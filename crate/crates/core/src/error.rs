use thiserror::Error;

/// Errors produced by construction, reconciliation, and scoring routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("aggregation matrix is empty")]
    EmptyMatrix,
    #[error("aggregation matrix row {0} is all zero")]
    AllZeroRow(usize),
    #[error("expected {expected} labels, got {got}")]
    LabelCountMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("covariance factorization failed: {0}")]
    FactorizationFailure(String),
    #[error("Q matrix is singular (degenerate base covariance)")]
    SingularQ,
    #[error("both base forecasts are point masses; conditioning is ill-defined")]
    DegenerateWeights,
    #[error("upper and bottom blocks are correlated")]
    CorrelatedBlocks,
    #[error("operation requires exactly one upper variable, hierarchy has {0}")]
    MultipleUppers(usize),
    #[error("importance weights are all zero; supports do not intersect at the sampled points")]
    AllWeightsZero,
    #[error("base forecasts must be independent between upper and bottom blocks")]
    DependentBlocks,
    #[error("coherence probability is not defined for continuous base forecasts")]
    ContinuousUnsupported,
    #[error("normalizer is zero: base supports are disjoint")]
    ZeroNormalizer,
    #[error("enumeration support exceeds {0} points")]
    SupportExplosion(usize),
    #[error("coherence probability is zero after truncation")]
    ZeroCoherence,
    #[error("sample set is empty")]
    EmptySamples,
    #[error("at least {0} samples required")]
    InsufficientSamples(usize),
    #[error("interval bounds are inverted (l > u)")]
    InvertedInterval,
    #[error("skill score requires non-negative metrics")]
    NegativeMetric,
    #[error("log-location left the admissible range at series {0}")]
    NonFiniteUpdate(usize),
    #[error("series contains no non-zero entries")]
    AllZeroSeries,
    #[error("reconciled covariance is not positive semi-definite within tolerance")]
    NumericalBreakdown,
}

pub type Result<T> = std::result::Result<T, Error>;
