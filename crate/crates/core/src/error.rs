use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration value is invalid. `field` names the offending entry.
    #[error("{field}: {message}")]
    Config { field: String, message: String },

    #[error("quadrature did not converge: estimate {estimate:e}, error bound {error_bound:e}, target {target:e}")]
    Quadrature { estimate: f64, error_bound: f64, target: f64 },

    #[error("measurement covariance is singular (condition number {condition:e}); use the ridge-regularized solve")]
    Singular {
        condition: f64,
        /// Coefficients obtained with the ridge term applied.
        fallback: Vec<f64>,
        ridge: f64,
    },

    #[error("no exploitable correlation between measurements and the prediction point")]
    NoCorrelation,

    #[error("degenerate spectrum: point variance is zero")]
    DegenerateSpectrum,

    #[error("objective is not finite at simplex vertex {vertex} ({point:?})")]
    NonFiniteObjective { vertex: usize, point: Vec<f64> },

    #[error("accuracy diverges: locked offset variance is zero")]
    DivergentAccuracy,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { field: field.into(), message: message.into() }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    /// True for errors caused by user input rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
