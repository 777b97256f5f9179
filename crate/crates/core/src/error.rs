use std::path::PathBuf;

use thiserror::Error;

use crate::lp::LpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a formula.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// The dispatch problem has no feasible schedule.
    #[error("infeasible dispatch{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Infeasible { step: Option<usize> },

    /// A lifecycle period could not be dispatched.
    #[error("period {period}: {source}")]
    Period {
        period: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Solver(#[from] LpError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the failure class (config=2, data=3, infeasible=4, internal=5).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Data(_) | Error::Domain(_) | Error::Csv(_) | Error::Io { .. } => 3,
            Error::Infeasible { .. } | Error::Solver(LpError::Infeasible) => 4,
            Error::Period { source, .. } => source.exit_code(),
            Error::Solver(_) => 5,
        }
    }
}
