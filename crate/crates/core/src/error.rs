use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("newton solve did not converge after {iterations} iterations (residual {residual_norm:.3e}, iterate {iterate:?})")]
    NonConvergence {
        iterations: usize,
        residual_norm: f64,
        iterate: [f64; 3],
    },

    #[error("transient step {step} (t = {time}s) failed: {source}")]
    Step {
        step: usize,
        time: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    Fingerprint { expected: String, found: String },

    #[error("dataset rejected: {failed} of {total} geometries failed")]
    DatasetRejected { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics (solver, fitting, training) rather
    /// than of inputs or files.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::DegenerateData(_)
            | Error::Training(_)
            | Error::DatasetRejected { .. } => true,
            Error::Step { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
