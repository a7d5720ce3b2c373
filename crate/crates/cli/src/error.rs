use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Solver(#[from] progot::Error),

    #[error("{path}: {source}")]
    Input { path: PathBuf, source: progot::Error },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },

    #[error("cannot encode report: {0}")]
    Json(#[from] serde_json::Error),

    #[error("{0} did not converge (--strict)")]
    Strict(String),
}

impl CliError {
    /// 2 for bad input, 3 for non-convergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use progot::Error as E;
        let core = match self {
            CliError::Solver(e) | CliError::Input { source: e, .. } => e,
            CliError::Config(_) => return 2,
            CliError::Strict(_) => return 3,
            CliError::Output { .. } | CliError::Json(_) => return 1,
        };
        match core {
            E::DimensionMismatch { .. }
            | E::InvalidCloud(_)
            | E::InvalidParameter(_)
            | E::DegenerateCost
            | E::OracleTooLarge { .. }
            | E::Format(_)
            | E::Io(_) => 2,
            E::NotConverged { .. } => 3,
            _ => 1,
        }
    }
}

pub fn config(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
