use thiserror::Error;

/// Errors produced by the optimization and asymptotics routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarpError {
    #[error("invalid gain schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("could not build a shaping factor: {0}")]
    Shaping(String),

    #[error("eigendecomposition failed: {0}")]
    Regularization(String),

    #[error("non-finite observation at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error(
        "stability condition violated: eigenvalue {eigenvalue:e} of the shifted gain matrix is not positive \
         (step numerator must exceed {threshold:e})"
    )]
    Unstable { eigenvalue: f64, threshold: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{0} is not available for this problem")]
    Unavailable(&'static str),
}

pub type Result<T, E = HarpError> = std::result::Result<T, E>;
