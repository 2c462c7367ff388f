//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by tensor ops, training, oracles, and evaluation.
#[derive(Debug, Error)]
pub enum MfError {
    /// Operand shapes are incompatible for the requested operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A scalar argument is outside its documented domain.
    #[error("{what} = {value} outside valid range {range}")]
    DomainError {
        what: &'static str,
        value: f64,
        range: &'static str,
    },

    /// A constructor or parser received an inconsistent description.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    /// The marginal velocity field is singular at the requested point.
    #[error("velocity field singular at t = {t}: {reason}")]
    SingularTime { t: f64, reason: &'static str },

    /// Training produced a non-finite loss or gradient.
    #[error("training diverged at iteration {iteration}: {reason}")]
    TrainingDiverged { iteration: u64, reason: String },

    /// A numeric result that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// An estimator was handed data it cannot work with.
    #[error("degenerate input for {what}: {reason}")]
    DegenerateInput { what: &'static str, reason: String },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, MfError>;
