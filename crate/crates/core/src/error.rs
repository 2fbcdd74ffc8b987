use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Occupations pushed past `n_max` carried more weight than allowed.
    #[error("truncation overflow: dropped weight {dropped:.3e} exceeds tolerance {tolerance:.3e}")]
    Truncation { dropped: f64, tolerance: f64 },

    #[error("undefined state: {0}")]
    UndefinedState(String),

    #[error("dark-count constraint gives unphysical probability {p_dc:.6e} at eta0 = {eta0}")]
    ConstraintViolation { eta0: f64, p_dc: f64 },

    #[error("visibility undefined: max + min coincidence rate is zero")]
    UndefinedVisibility,

    #[error(
        "truncation did not converge up to n_max = {n_max}: {observable} moved from {previous:.9e} to {current:.9e}"
    )]
    NotConverged {
        n_max: usize,
        observable: &'static str,
        previous: f64,
        current: f64,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::Truncation { .. } => "truncation-error",
            Error::UndefinedState(_) => "undefined-state",
            Error::ConstraintViolation { .. } => "constraint-violation",
            Error::UndefinedVisibility => "undefined-visibility",
            Error::NotConverged { .. } => "not-converged",
        }
    }
}
