//! Library behind the `fpl` binary: configuration, run-directory formats and
//! the four subcommands.
//!
//! Exit codes are a stable contract: 0 success, 2 usage error, 3 numerical
//! failure, 4 stability halt.

pub mod analyze;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod verify;

use fpl_core::dynamics::DynamicsError;
use fpl_core::weights::WeightError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_HALT: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
    #[error("stability halt at t = {t}: {message}")]
    Halt { t: f64, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Io(_) => EXIT_USAGE,
            Self::Numerical(_) => EXIT_NUMERICAL,
            Self::Halt { .. } => EXIT_HALT,
        }
    }

    pub fn halt_time(&self) -> Option<f64> {
        match self {
            Self::Halt { t, .. } => Some(*t),
            _ => None,
        }
    }
}

impl From<WeightError> for CliError {
    fn from(e: WeightError) -> Self {
        match e {
            WeightError::Io(_) => Self::Io(e.to_string()),
            WeightError::SoftPotential(_)
            | WeightError::LambdaOutOfRange(_)
            | WeightError::BadRadius(_)
            | WeightError::TooFewQuadPoints(_) => Self::Usage(e.to_string()),
            _ => Self::Numerical(e.to_string()),
        }
    }
}

impl From<DynamicsError> for CliError {
    fn from(e: DynamicsError) -> Self {
        let message = e.to_string();
        match e {
            DynamicsError::StabilityBreach { t, .. } => Self::Halt { t, message },
            DynamicsError::InitialStability { .. } => Self::Halt { t: 0.0, message },
            DynamicsError::Config(_) => Self::Usage(message),
            DynamicsError::Sink(_) => Self::Io(message),
            DynamicsError::Kernel(w) => w.into(),
            _ => Self::Numerical(message),
        }
    }
}
