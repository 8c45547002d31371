use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("mesh topology: {0}")]
    Topology(String),

    #[error("material: {0}")]
    Material(String),

    #[error("conjugate gradient did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("eigenvalue estimate did not converge in {iterations} iterations")]
    EstimateDiverged { iterations: usize },

    #[error("point ({x}, {y}) is outside the mesh; walk stopped in face {last_face}")]
    WalkEscaped { x: f64, y: f64, last_face: usize },

    #[error("scenario: {0}")]
    Scenario(String),

    #[error("initialization: {0}")]
    Initialization(String),

    #[error("non-finite value in {what} at step {step}")]
    NonFinite { what: &'static str, step: u64 },

    #[error("unknown vertex {0}")]
    UnknownVertex(usize),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
