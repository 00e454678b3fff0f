use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) = {value} is outside [0, 1]")]
    EntryOutOfRange { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum} > 1")]
    RowSumExceedsOne { row: usize, sum: f64 },
    #[error("matrix has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("environment chain needs at least one state")]
    Empty,
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("{labels} labels given for a {dim}x{dim} transition matrix")]
    LabelMismatch { labels: usize, dim: usize },
    #[error("duplicate state label `{0}`")]
    DuplicateLabel(String),
    #[error("transition row `{state}`: entry {col} = {value} is not a probability")]
    InvalidEntry { state: String, col: usize, value: f64 },
    #[error("transition row `{state}` sums to {sum}, expected 1")]
    NotStochastic { state: String, sum: f64 },
    #[error("chain is not irreducible: {detail}")]
    NotIrreducible { detail: String },
    #[error("stationary distribution solve failed: {0}")]
    StationarySolve(String),
    #[error("offspring weights must be nonnegative with at least one positive: {0}")]
    EmptyOrNegative(String),
    #[error("offspring distribution of `{state}` sums to {sum}, expected 1 (truncate and renormalize before loading)")]
    NotNormalized { state: String, sum: f64 },
    #[error("expected {expected} offspring distributions, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no offspring distribution for state `{0}`")]
    MissingOffspring(String),
    #[error("offspring distribution given for unknown state `{0}`")]
    UnknownState(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid initial total state: {0}")]
    InvalidInit(String),
    #[error("excursion decomposition needs a Z-valued trajectory")]
    WrongMode,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenfunError {
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error("extinction iteration did not converge (residual {residual})")]
    NotConverged { residual: f64 },
    #[error("matrix is reducible; the Perron vector is not determined")]
    Reducible,
    #[error("zero matrix has no Perron vector")]
    ZeroMatrix,
    #[error("power iteration stalled with eigen-residual {residual}")]
    PerronStalled { residual: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AsymptoticsError {
    #[error("fertility system is singular; the environment chain is not irreducible")]
    SingularBeyondExpected,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidateError {
    #[error("CLT variance sigma_M^2 = {0} is not positive; the CLT check does not apply")]
    DegenerateVariance(f64),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Genfun(#[from] GenfunError),
    #[error(transparent)]
    Asymptotics(#[from] AsymptoticsError),
}
