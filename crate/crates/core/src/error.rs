use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("formula syntax error at position {pos}: {message}")]
    Parse { pos: usize, message: String },

    #[error("column `{0}` not found in data")]
    MissingColumn(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("value outside family support: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid rank {rank} for dimension {q}")]
    InvalidRank { rank: usize, q: usize },

    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("all {n} restarts failed to converge")]
    NoConvergence {
        n: usize,
        /// The best non-converged fit, kept so callers can still report it.
        best: Option<Box<crate::optimize::FitResult>>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(pos: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            pos,
            message: message.into(),
        }
    }
}
