use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration data (dimensions, coefficient layout, tolerances).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Bad argument to an operation (e.g. p <= 1 for an Lp solve).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Operation not available for this density (e.g. custom density
    /// without a sublevel callback).
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// Projection requested onto an empty sublevel set.
    #[error("infeasible level: sublevel set at x={x:?}, M={level} is empty")]
    InfeasibleLevel { x: Vec<f64>, level: f64 },

    /// Solvers refused for a density that failed level-convexity
    /// verification (evaluation is still allowed).
    #[error("solvers refused: {0}")]
    SolverRefused(String),

    /// The periodic Poisson projection did not reach its residual tolerance.
    #[error("linear solver stalled: relative residual {residual:e} after {iterations} iterations")]
    LinearSolve { residual: f64, iterations: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
