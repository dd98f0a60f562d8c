use thiserror::Error;

use crate::sparse::SparseSolution;

/// Errors raised across the sensing toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("delay {delay_s:e} s is outside the dictionary span of {span} bins")]
    DelayOutOfRange { delay_s: f64, span: usize },

    #[error("scene specification is infeasible: {0}")]
    InfeasibleScene(String),

    #[error("unresolvable: {0}")]
    Unresolved(String),

    #[error(transparent)]
    Solver(#[from] SolverError),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Failure modes of the sparse recovery engines.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("residual did not decrease on the first selection")]
    Stagnated,

    #[error("no convergence after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        best: Box<SparseSolution>,
    },

    #[error("numerical breakdown: {0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
