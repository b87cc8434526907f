use thiserror::Error;

/// Errors raised by the simulation, post-processing and fitting routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("moment system index {0} out of range (expected 1..=5)")]
    InvalidIndex(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("non-physical covariance: {0}")]
    NonPhysical(String),

    #[error("eigen-solver failure: {0}")]
    Eigen(String),

    #[error("bracket [{lo}, {hi}] does not straddle the boundary")]
    Bracket { lo: f64, hi: f64 },

    #[error("moments overflowed before a plateau was reached (last E_N = {partial})")]
    OverflowBeforePlateau { partial: f64 },

    #[error("no plateau within the horizon (last E_N = {partial})")]
    NoPlateau { partial: f64 },

    #[error("approximation out of validity range: {0}")]
    OutOfValidity(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("oracle precondition violated: {0}")]
    Stability(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
