use exploration_mfg::{Error, IterationResidual};
use serde_json::json;

/// Failure of a CLI run, mapped onto an exit status and a JSON diagnostic.
#[derive(Debug)]
pub enum Failure {
    Validation {
        field: String,
        reason: String,
    },
    NotConverged {
        iterations: usize,
        history: Vec<IterationResidual>,
    },
    Solver(String),
    Io(String),
}

impl Failure {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Failure::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// 1 for bad inputs, 2 when a solver fails to produce an answer, 3 for I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Validation { .. } => 1,
            Failure::NotConverged { .. } | Failure::Solver(_) => 2,
            Failure::Io(_) => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Validation { field, reason } => json!({
                "error": "validation",
                "field": field,
                "reason": reason,
            }),
            Failure::NotConverged {
                iterations,
                history,
            } => json!({
                "error": "not_converged",
                "iterations": iterations,
                "residuals": history,
            }),
            Failure::Solver(message) => json!({ "error": "solver", "message": message }),
            Failure::Io(message) => json!({ "error": "io", "message": message }),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter { field, reason } => Failure::Validation { field, reason },
            Error::LengthMismatch { .. } => Failure::validation("input", e.to_string()),
            Error::NotConverged {
                iterations,
                history,
            } => Failure::NotConverged {
                iterations,
                history,
            },
            Error::Io(_) | Error::Csv(_) => Failure::Io(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.to_string())
    }
}
