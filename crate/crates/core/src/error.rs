use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Lévy measure: {0}")]
    InvalidMeasure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("grid size mismatch: expected {expected}, got {got}")]
    GridMismatch { expected: usize, got: usize },

    #[error("time step too large: iterate diverged at iteration {iteration} (dt = {dt:e})")]
    CflViolation { iteration: usize, dt: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("linear program infeasible (phase-one objective {objective:e})")]
    Infeasible { objective: f64, certificate: Vec<f64> },

    #[error("linear program unbounded")]
    Unbounded,

    #[error("iteration limit reached in simplex after {0} pivots")]
    SimplexIterationLimit(usize),

    #[error("Fenchel maximizer still on the p-grid boundary after {0} extensions")]
    FenchelBoundary(usize),

    #[error("empty measure set")]
    EmptyMeasureSet,

    #[error("pointwise monotonicity violated at k = {0}")]
    MonotonicityViolation(usize),

    #[error(
        "cannot reach defect {required:e} at n = {n}: achieved {achieved:e}, estimated grid size needed {grid_needed}"
    )]
    ScheduleFailure {
        n: usize,
        required: f64,
        achieved: f64,
        grid_needed: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
