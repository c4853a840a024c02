use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("need at least {needed} replications, got {got}")]
    InsufficientReplications { needed: usize, got: usize },

    #[error("kernel does not cover pair ({}, {}) -> ({}, {})", .first.0, .first.1, .second.0, .second.1)]
    MissingPair {
        first: (usize, usize),
        second: (usize, usize),
    },

    #[error(
        "omega is not positive definite: smallest eigenvalue {min_eigenvalue:e} <= floor {floor:e}; \
         the affinity sets do not capture a valid normalization"
    )]
    NotPositiveDefinite { min_eigenvalue: f64, floor: f64 },

    #[error("covariance matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}); a diagonal jitter of at least {required_jitter:e} would be required")]
    CovarianceNotPd { min_eigenvalue: f64, required_jitter: f64 },

    #[error("locations {i} and {j} are {distance} apart, below the minimum separation {min_separation}")]
    MinSeparation {
        i: usize,
        j: usize,
        distance: f64,
        min_separation: f64,
    },

    #[error("Monte Carlo precision too low: {detail}; about {required} replications are needed")]
    InsufficientPrecision { detail: String, required: usize },

    #[error("positivity violated for {count} unit(s) (first: {first})")]
    Positivity { count: usize, first: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
