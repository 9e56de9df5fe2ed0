use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] cnext::Error),
}

/// The machine-readable form written to stderr and the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorReport {
    pub kind: &'static str,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

impl CliError {
    /// 0 ok, 2 config, 3 divergence or numerical failure, 4 io or parse.
    pub fn exit_code(&self) -> i32 {
        use cnext::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::DimensionMismatch { .. } => 2,
                E::Divergence { .. } | E::NumericalFailure { .. } | E::ConvergenceFailure { .. } => 3,
                E::Parse { .. } | E::Io(_) => 4,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        use cnext::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::InvalidArgument(_) => "invalid-argument",
                E::DimensionMismatch { .. } => "dimension-mismatch",
                E::Divergence { .. } => "divergence",
                E::NumericalFailure { .. } => "numerical-failure",
                E::ConvergenceFailure { .. } => "convergence-failure",
                E::Parse { .. } => "parse",
                E::Io(_) => "io",
            },
        }
    }

    pub fn report(&self) -> ErrorReport {
        use cnext::Error as E;
        let (iteration, agent, row) = match self {
            CliError::Core(E::Divergence { t, .. }) => (Some(*t), None, None),
            CliError::Core(E::NumericalFailure { agent, .. }) => (None, Some(*agent), None),
            CliError::Core(E::ConvergenceFailure { iterations, .. }) => {
                (Some(*iterations), None, None)
            }
            CliError::Core(E::Parse { row, .. }) => (None, None, Some(*row)),
            _ => (None, None, None),
        };
        ErrorReport {
            kind: self.kind(),
            message: self.to_string(),
            exit_code: self.exit_code(),
            iteration,
            agent,
            row,
        }
    }
}
