use thiserror::Error;

/// Errors raised by the estimator, analysis and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Cholesky-style factorization hit a nonpositive pivot.
    #[error("factorization broke down at pivot {pivot} (value {value:e})")]
    Degenerate { pivot: usize, value: f64 },

    #[error("matrix is not positive definite (smallest eigenvalue {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },

    #[error("record too short: need at least {needed} entries, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("insufficient runs: need at least {min}, got {got}")]
    InsufficientRuns { min: usize, got: usize },

    #[error("scenario has {segments} parameter segments; constant parameters are required")]
    ParameterChange { segments: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by loss of positive definiteness.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Degenerate { .. } | Error::NotPositiveDefinite { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
