use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("duplicate observation for subject '{subject}' at s = {s}")]
    DuplicateObservation { subject: String, s: f64 },

    #[error("input contains no observations")]
    EmptyInput,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("penalized design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("too few raw covariance points ({found}, need at least {required}); denser data is needed")]
    TooFewCovariancePoints { found: usize, required: usize },

    #[error("covariance surface has no positive eigenvalues")]
    NoPositiveEigenvalues,

    #[error("singular score system for subject '{subject}': {reason}")]
    SingularSystem { subject: String, reason: String },

    #[error("correlation undefined: {0}")]
    ConstantInput(String),

    #[error("bootstrap replicate {replicate} failed after {attempts} attempts: {last_error}")]
    BootstrapFailed {
        replicate: usize,
        attempts: usize,
        last_error: String,
    },

    #[error("{failed} of {total} replicates failed, exceeding the 10% limit; first failure: {first_error}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first_error: String,
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
