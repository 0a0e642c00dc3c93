use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything the library can fail with.
///
/// Solver failures that are a legitimate scientific outcome (infeasible
/// balance constraints, a Newton system that never settles) are kept apart
/// from usage errors so callers can tally them instead of aborting.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("rank-deficient constraint features ({0}); drop collinear columns before balancing")]
    RankDeficient(String),
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("search budget exceeded: {0}")]
    Budget(String),
    #[error("outcomes are withheld from the balancing stage")]
    OutcomeWithheld,
}

impl Error {
    /// True for failures that describe the data/problem rather than misuse.
    pub fn is_method_failure(&self) -> bool {
        matches!(
            self,
            Error::Infeasible(_)
                | Error::RankDeficient(_)
                | Error::NotConverged { .. }
                | Error::Budget(_)
        )
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
