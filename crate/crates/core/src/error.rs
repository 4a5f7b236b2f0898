use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("empty grid")]
    EmptyGrid,
    #[error("nonpositive horizon {0}")]
    NonPositiveHorizon(f64),
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("invalid mark space: {0}")]
    InvalidMarks(String),
    #[error("mark intensity too large for step (mark {mark}: Π·Δt = {product})")]
    MarkIntensityTooLarge { mark: usize, product: f64 },
    #[error("tree too large ({nodes} leaves, cap {cap})")]
    TreeTooLarge { nodes: u128, cap: u64 },
    #[error("range off-grid: {0}")]
    OffGrid(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("measurability violation: {0}")]
    Measurability(String),
    #[error("rank-deficient R (smallest singular value {0:e})")]
    RankDeficient(f64),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("singular boundary system")]
    SingularBoundary,
    #[error("no contraction at α={alpha} (δ={delta})")]
    NoContraction { alpha: f64, delta: f64 },
    #[error("picard iteration did not converge in {iterations} iterations at α={alpha}")]
    MaxIterations { alpha: f64, iterations: usize },
    #[error("continuation stalled at α={alpha} (δ={delta})")]
    ContinuationStalled { alpha: f64, delta: f64 },
    #[error("linear solve failed: {0}")]
    LinearSolve(String),
    #[error("possible non-uniqueness (restart spread {spread:e})")]
    PossibleNonUniqueness { spread: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;
