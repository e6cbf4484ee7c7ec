use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failure classes surfaced to the CLI and the C ABI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Parse,
    Validation,
    Infeasible,
    Numerical,
    Io,
    Input,
}

impl ErrorClass {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Parse => 10,
            ErrorClass::Validation => 11,
            ErrorClass::Infeasible => 12,
            ErrorClass::Numerical => 13,
            ErrorClass::Io => 14,
            ErrorClass::Input => 15,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorClass::Parse => "parse",
            ErrorClass::Validation => "validation",
            ErrorClass::Infeasible => "infeasible",
            ErrorClass::Numerical => "numerical",
            ErrorClass::Io => "io",
            ErrorClass::Input => "input",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "power flow did not converge in period {period} after {iterations} iterations \
         (worst residual {residual:.3e})"
    )]
    NonConvergence {
        period: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("voltage collapse at node `{node}` in period {period} (v = {v:.3e})")]
    VoltageCollapse { node: String, period: usize, v: f64 },

    #[error("EV schedule error: {0}")]
    EvSchedule(String),

    #[error("EV `{ev}` cannot meet its itinerary: {reason}")]
    EvInfeasible { ev: String, reason: String },

    #[error("problem is infeasible ({0})")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(
        "singular sensitivity system for period {period} (condition estimate {condition:.3e})"
    )]
    SingularSystem { period: usize, condition: f64 },

    #[error("missing dual: {0}")]
    MissingDual(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. } => ErrorClass::Parse,
            Error::Validation(_) | Error::UnknownNode(_) | Error::EvInfeasible { .. } => {
                ErrorClass::Validation
            }
            Error::Infeasible(_) => ErrorClass::Infeasible,
            Error::NonConvergence { .. }
            | Error::VoltageCollapse { .. }
            | Error::Numerical(_)
            | Error::SingularSystem { .. } => ErrorClass::Numerical,
            Error::Io { .. } => ErrorClass::Io,
            Error::ShapeMismatch(_)
            | Error::Domain(_)
            | Error::EvSchedule(_)
            | Error::MissingDual(_) => ErrorClass::Input,
        }
    }
}
