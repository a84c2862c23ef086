use thiserror::Error;

/// Errors raised by graph construction, solvers and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid adjacency at ({row}, {col}): {reason}")]
    InvalidAdjacency {
        row: usize,
        col: usize,
        reason: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive semidefinite: smallest eigenvalue {0:e}")]
    NotPsd(f64),

    #[error("symmetric scaling did not converge after {iterations} iterations (max row-sum deviation {deviation:e})")]
    ScalingNoConvergence { iterations: usize, deviation: f64 },

    #[error("affinity matrix is not doubly stochastic (max row/column sum deviation {0:e})")]
    NotDoublyStochastic(f64),

    #[error("graph is disconnected (lambda_2 = {0:e})")]
    Disconnected(f64),

    #[error("{solver} did not converge within {iterations} iterations (achieved {achieved:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        achieved: f64,
    },

    #[error("delay {delay} exceeds the {available} stored iterates")]
    DelayExceedsHistory { delay: usize, available: usize },

    #[error("sample stream exhausted on machine {machine} after {drawn} draws")]
    StreamExhausted { machine: usize, drawn: u64 },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
