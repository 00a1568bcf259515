//! Error type shared by every stage of the pipeline.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HenonError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("map is not invertible at b = 0")]
    SingularMap,

    #[error("fixed points are complex (discriminant {0:.3e} < 0)")]
    NoSaddle(f64),

    #[error("orbit left the bounding box at step {step}")]
    Escape { step: usize },

    #[error("curve has {vertices} vertices, above the cap of {cap}")]
    Resource { vertices: usize, cap: usize },

    #[error("curve not found in search window: {0}")]
    NotFound(String),

    #[error("no sign change on bracket: gap({lo:.6}) = {gap_lo:+.3e}, gap({hi:.6}) = {gap_hi:+.3e} have the same sign")]
    Bracket { lo: f64, hi: f64, gap_lo: f64, gap_hi: f64 },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NoConvergence { iterations: usize, detail: String },

    #[error("insufficient curve for {0}")]
    InsufficientCurve(String),

    #[error("refinement needed at step {step}: {detail}")]
    RefinementNeeded { step: usize, detail: String },

    #[error("depth {requested} exceeds available depth {available}")]
    Depth { requested: usize, available: usize },

    #[error("geometry violation: {0}")]
    Geometry(String),

    #[error("tail diverges: {0}")]
    Tail(String),

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("missing dependency: {0}")]
    Dependency(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, HenonError>;

impl From<std::io::Error> for HenonError {
    fn from(e: std::io::Error) -> Self {
        HenonError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HenonError {
    fn from(e: serde_json::Error) -> Self {
        HenonError::Format(e.to_string())
    }
}
