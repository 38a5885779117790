use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmspError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid divergence spec `{0}`")]
    InvalidDivergence(String),
    #[error("point cloud needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("non-finite coordinate at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("parameter {index} = {value} is outside its admissible range ({lo}, {hi})")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
    #[error("expected {expected} parameters, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("{dropped} of {n} ball probabilities underflowed (more than 1%)")]
    TooManyDropped { dropped: usize, n: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("optimization failed after {starts} starts (best score {best_score})")]
    NotConverged { starts: usize, best_score: f64, best_theta: Vec<f64> },
    #[error("quadrature did not reach tolerance: estimated error {achieved:e}")]
    Quadrature { value: f64, achieved: f64 },
    #[error("weight function is degenerate: {0}")]
    DegenerateWeight(String),
}

pub type Result<T> = std::result::Result<T, GmspError>;
