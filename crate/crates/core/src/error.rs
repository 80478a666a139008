use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("series set needs at least 2 time steps and 2 series (got T={steps}, N={series})")]
    TooSmall { steps: usize, series: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("price at index {index} is not positive ({value})")]
    NonPositivePrice { index: usize, value: f64 },

    #[error("window size {window} does not fit a series of length {len}")]
    WindowTooLarge { window: usize, len: usize },

    #[error("concept count estimation needs at least 3 series, got {0}")]
    TooFewSeries(usize),

    #[error("non-finite value at solver iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unknown kernel family `{0}`")]
    UnknownKernel(String),

    #[error("prototype set is empty")]
    EmptyPrototypes,

    #[error("profile length {actual} does not match catalog window length {expected}")]
    WindowLengthMismatch { expected: usize, actual: usize },

    #[error("no clustering for window {0}")]
    MissingWindow(usize),

    #[error("segment has {actual} rows, expected {expected}")]
    SegmentLength { expected: usize, actual: usize },

    #[error("need at least {needed} windows of history, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("cannot form {requested} clusters: {reason}")]
    ClusterCount { requested: usize, reason: String },
}
