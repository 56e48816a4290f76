use thiserror::Error;

/// Errors raised by the market model, the solvers and the sweep harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("elasticity undefined at x = {x}: function value is zero")]
    UndefinedElasticity { x: f64 },

    #[error("cannot aggregate content providers: {0}")]
    AggregationIncompatible(String),

    #[error("no utilization root: gap still non-positive after {doublings} bracket doublings")]
    NoRoot { doublings: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("index {index} out of range for {len} content providers")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("singular equilibrium Jacobian (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("revenue is not differentiable at p = {p}: partition changes within h = {h}")]
    NonDifferentiable { p: f64, h: f64 },

    #[error("equilibrium did not converge after {iterations} iterations (last step {last_step:.3e})")]
    NonConvergence { iterations: usize, last_step: f64 },

    #[error("scenario parse error: {0}")]
    Parse(String),

    #[error("scenario validation failed at `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("unknown verification suite `{0}`")]
    UnknownSuite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
