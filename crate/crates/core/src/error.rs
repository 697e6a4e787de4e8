//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the model, the integrator, or the estimator.
#[derive(Debug, Error)]
pub enum Error {
    /// An input or an intermediate result was NaN/inf.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// The inner-loop algebraic system lost rank (|det| below floor).
    #[error("algebraic loop is singular (det = {det:.3e})")]
    SingularAlgebra { det: f64 },

    /// A guard was hit tangentially; the saltation denominator is ~0.
    #[error("grazing transition: |alpha| = {alpha:.3e} below floor")]
    GrazingTransition { alpha: f64 },

    /// A covariance input was not positive semidefinite.
    #[error("matrix is not positive semidefinite ({0})")]
    NotPsd(&'static str),

    /// `locate_event` was called without a sign change across the step.
    #[error("no guard sign change across the step")]
    NoSignChange,

    /// A Runge-Kutta stage produced a non-finite state.
    #[error("integration step failed at t = {t}")]
    StepFailed { t: f64 },

    /// Invalid configuration (parameters, scenario file, CLI flags).
    #[error("configuration error: {0}")]
    Config(String),

    /// A run failed numerically (divergence, truncated trajectory, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code the CLI maps this error to (1 = config, 2 = numerical).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
