use serde::Serialize;
use thiserror::Error;

/// Sup-norm deltas recorded after each Picard iterate (from the second on).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationResidual {
    pub iteration: usize,
    pub value_delta: f64,
    pub distribution_delta: f64,
    pub price_delta: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("CFL condition violated at t = {t}: courant number {courant:.4} > 1")]
    Cfl { t: f64, courant: f64 },

    #[error("non-finite value function state at t = {t}")]
    NonFinite { t: f64 },

    #[error("reserves distribution lost monotonicity at t = {t} (violation {violation:.3e})")]
    Monotonicity { t: f64, violation: f64 },

    #[error("price update fell to {price} <= marginal production cost at t = {t}")]
    UnprofitablePrice { t: f64, price: f64 },

    #[error("fixed point did not converge within {iterations} iterations")]
    NotConverged {
        iterations: usize,
        history: Vec<IterationResidual>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad inputs rather than solver behaviour.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidParameter { .. } | Error::LengthMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
