use thiserror::Error;

/// Errors raised while building, filtering or evaluating a factor model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DfmError {
    #[error("factor dynamics are not stationary: {0}")]
    NonStationary(String),

    #[error("{what} is not positive definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("normal equations for {what} are numerically singular")]
    SingularNormalEquations { what: &'static str },

    #[error("filter covariance lost positive semi-definiteness at t = {t} (min eigenvalue {min_eigenvalue:e})")]
    NonPsdPropagation { t: usize, min_eigenvalue: f64 },

    #[error("Riccati recursion did not converge within {horizon} steps (residual {residual:e})")]
    NoConvergence { horizon: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error("scenario [{scenario}]: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: Box<DfmError>,
    },
}

impl DfmError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        DfmError::InvalidParameter {
            field,
            reason: reason.into(),
        }
    }

    /// Attaches a scenario description to an error.
    pub fn in_scenario(self, scenario: impl Into<String>) -> Self {
        DfmError::Scenario {
            scenario: scenario.into(),
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = DfmError> = std::result::Result<T, E>;
