use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error {0}")]
    Config(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("invariant violations:\n  {}", .0.join("\n  "))]
    Invariant(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Integration(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) => 1,
        })
    }

    /// Errors raised while integrating; setup problems count as config errors.
    pub fn from_run(e: seaq_core::Error) -> Self {
        use seaq_core::Error as E;
        match e {
            E::InvalidArgument(_)
            | E::Unsupported(_)
            | E::DimensionMismatch { .. }
            | E::NotSquare { .. }
            | E::NotHermitian { .. } => CliError::Config(e.to_string()),
            other => CliError::Integration(other.to_string()),
        }
    }
}
