use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected model: {0}")]
    RejectedModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Row `0` of the frequency matrix is empty, so the empirical transition
    /// matrix is undefined there.
    #[error("zero row in frequency matrix at state {0}")]
    ZeroRow(usize),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("fixed-point iteration did not converge (residual {residual:e} after {iterations} iterations)")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("inversion failed at {} grid point(s): {}", .failed.len(), FailedPoints(.failed))]
    InversionFailed { failed: Vec<(usize, f64)> },

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("no r <= {cap} reaches relative pointwise distance {epsilon:e}")]
    CapExceeded { cap: usize, epsilon: f64 },

    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("cluster {0} has no outgoing transitions")]
    ZeroClusterRow(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

struct FailedPoints<'a>(&'a [(usize, f64)]);

impl fmt::Display for FailedPoints<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, (i, x)) in self.0.iter().take(8).enumerate() {
            if n > 0 {
                f.write_str(", ")?;
            }
            write!(f, "#{i} (x = {x})")?;
        }
        if self.0.len() > 8 {
            f.write_str(", ...")?;
        }
        Ok(())
    }
}
