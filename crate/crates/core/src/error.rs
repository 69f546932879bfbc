use thiserror::Error;

use crate::qp::QpSolveReport;

/// Errors produced by the solver library.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all training points are identical; kernel bandwidth is undefined")]
    AllPointsIdentical,

    #[error("infeasible constraint set: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The QP solver ran out of iterations; the best iterate found so far is
    /// attached so callers can recover it.
    #[error("QP solver hit the iteration limit (best residual {})", .0.kkt_residual)]
    MaxIterations(Box<QpSolveReport>),

    #[error("{path}:{line}: parse error: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("row {row}: {msg}")]
    InvariantViolation { row: usize, msg: String },

    #[error("invalid corruption spec: {0}")]
    InvalidSpec(String),

    #[error("empty input")]
    EmptyInput,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
