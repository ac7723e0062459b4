//! Error type shared by every operation in the crate.
//!
//! Two broad families matter to callers:
//!
//! * argument/constraint problems (`InvalidArgument`, `Constraint`, `Config`)
//!   that are detectable before any numerical work starts, and
//! * runtime numerical failures (`NonFinite`, `CflViolation`,
//!   `MonotonicityLoss`, `QuadratureInadequate`) that carry enough context to
//!   localize the failure (blow-up time and state, required step size, the
//!   offending grid node, ...).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TsError {
    /// An argument is outside its documented domain (bad dimension, empty
    /// list, non-increasing radii, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A named model/parameter constraint does not hold.
    #[error("constraint `{name}` violated: {detail}")]
    Constraint { name: String, detail: String },

    /// A trajectory or field produced a non-finite value.
    #[error("non-finite value in {context} at t = {time:.6}; last state {state:?}")]
    NonFinite {
        context: String,
        time: f64,
        state: Vec<f64>,
    },

    /// Explicit time stepping was requested with a step that violates the
    /// stability bound computed from the coefficients on the grid.
    #[error("time step {given_dt:.6e} violates the stability bound; require dt <= {required_dt:.6e} ({detail})")]
    CflViolation {
        given_dt: f64,
        required_dt: f64,
        detail: String,
    },

    /// A scheme lost its monotone (positive-coefficient) structure.
    #[error("monotone scheme structure lost at node {node:?}: {detail}")]
    MonotonicityLoss { node: (usize, usize), detail: String },

    /// A quadrature box failed its mass check or two quadrature routes
    /// disagree beyond tolerance.
    #[error("quadrature inadequate: {0}")]
    QuadratureInadequate(String),

    /// Config file problems (parse errors, unknown keys, bad values).
    #[error("config error: {0}")]
    Config(String),
}

impl TsError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TsError::InvalidArgument(msg.into())
    }

    pub fn constraint(name: impl Into<String>, detail: impl Into<String>) -> Self {
        TsError::Constraint {
            name: name.into(),
            detail: detail.into(),
        }
    }

    /// True for errors that indicate a misuse of the API rather than a
    /// numerical breakdown; the CLI maps these to exit code 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            TsError::InvalidArgument(_) | TsError::Constraint { .. } | TsError::Config(_)
        )
    }
}

pub type TsResult<T> = Result<T, TsError>;
