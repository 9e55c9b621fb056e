use std::path::PathBuf;

use crate::field::Field2D;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid potential: {0}")]
    InvalidPotential(String),

    /// Quadrature or another inner numerical routine missed its target.
    #[error("{what} did not converge (achieved tolerance {achieved:.3e})")]
    Numerical { what: String, achieved: f64 },

    #[error("solver failed after {iterations} iterations: {reason}")]
    Solver {
        reason: String,
        iterations: usize,
        residual_history: Vec<f64>,
    },

    #[error("solver diverged: residual grew for {steps} consecutive accepted steps")]
    Divergence { steps: usize, best: Box<Field2D> },

    #[error("solver hit the iteration limit ({max_iter}) with residual {residual:.3e}")]
    Timeout {
        max_iter: usize,
        residual: f64,
        best: Box<Field2D>,
    },

    #[error("qualitative failure: {0}")]
    Qualitative(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed snapshot: {0}")]
    Snapshot(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the nonlinear solve itself, as opposed to bad
    /// input or a failed check.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Solver { .. }
                | Error::Divergence { .. }
                | Error::Timeout { .. }
                | Error::Numerical { .. }
                | Error::Qualitative(_)
        )
    }
}
