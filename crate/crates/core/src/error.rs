use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("operator not coercive (curvature {curvature:e})")]
    NotCoercive { curvature: f64 },

    #[error("inner solve did not converge after {iterations} iterations (relative residual {residual:e})")]
    InnerSolveDiverged { iterations: usize, residual: f64 },

    #[error("degenerate direction: |phi + v| = {norm:e}")]
    DegenerateDirection { norm: f64 },

    #[error("line search stagnated after {backtracks} backtracks")]
    LineSearchStagnation { backtracks: usize },

    #[error("weight archive: {0}")]
    Archive(String),

    #[error("dataset format at byte {offset}: {msg}")]
    Dataset { offset: u64, msg: String },

    #[error("model: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
