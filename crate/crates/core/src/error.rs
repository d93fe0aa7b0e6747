use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration; `field` names the offending input.
    #[error("invalid configuration ({field}): {message}")]
    Config { field: String, message: String },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Request exceeds a resource guard (point counts, grid sizes).
    #[error("resource guard: {0}")]
    Resource(String),

    /// Evaluation exactly on the inclusion interface, where the field jumps.
    #[error("point lies on the inclusion interface |x| = 1; use one-sided limits")]
    Interface,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("sweep aborted: {failed} of {total} ensemble members failed")]
    SweepFailed { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
