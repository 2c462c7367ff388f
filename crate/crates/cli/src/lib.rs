//! Command-line surface for training, sampling, verifying, evaluating, and
//! exporting average-velocity models.
//!
//! The binary front-end in `main.rs` is a thin dispatcher; everything it
//! does lives here so the pieces stay unit-testable. Exit codes are part of
//! the contract: 0 success, 2 configuration error, 3 training divergence,
//! 4 verification failure, 1 anything else.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod parse;

use meanflow::MfError;

/// Exit code for configuration problems (bad file, unknown key, bad flag).
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for training divergence.
pub const EXIT_DIVERGED: i32 = 3;
/// Exit code for a failed verification check.
pub const EXIT_VERIFY: i32 = 4;

/// An error carrying the process exit code it should produce.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn diverged(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DIVERGED,
            message: message.into(),
        }
    }

    pub fn verification(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VERIFY,
            message: message.into(),
        }
    }

    pub fn other(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<MfError> for CliError {
    fn from(err: MfError) -> Self {
        match err {
            MfError::TrainingDiverged { .. } => CliError::diverged(err.to_string()),
            other => CliError::other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::other(err.to_string())
    }
}
