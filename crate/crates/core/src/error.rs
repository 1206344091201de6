use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a function.
    #[error("{what}: argument {value} outside the domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("matrix is not positive definite: pivot {pivot} is {value:e}")]
    Factorization { pivot: usize, value: f64 },

    #[error("matrix is not symmetric: entry ({row}, {col}) differs from its transpose by {diff:e}")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Adaptive quadrature ran out of subdivisions. The best estimate is kept.
    #[error("quadrature did not converge{context}: estimate {estimate:e} with error estimate {error:e}")]
    Quadrature { estimate: f64, error: f64, context: String },

    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        last: Vec<f64>,
    },

    #[error("non-finite value while evaluating {0}")]
    NonFinite(&'static str),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("estimator failed: {failed} of {reps} replications produced no finite ratio")]
    EstimatorFailure { failed: usize, reps: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
