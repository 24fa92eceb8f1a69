use crate::state::ContactId;
use thiserror::Error;

/// Errors raised by the estimator and its building blocks.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not antisymmetric (|M + M^T| = {asymmetry:e})")]
    NotAntisymmetric { asymmetry: f64 },

    #[error("tangent vector has dimension {got}, state expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("state structure mismatch: {0}")]
    StructureMismatch(String),

    #[error("contact {0} already present in the state")]
    DuplicateContact(ContactId),

    #[error("contact {0} is not part of the state")]
    UnknownContact(ContactId),

    #[error("IMU index {index} out of range ({count} IMUs)")]
    UnknownImu { index: usize, count: usize },

    #[error("inertia matrix is singular")]
    SingularInertia,

    #[error("contact linear stiffness is singular")]
    SingularStiffness,

    #[error("innovation covariance is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NonPositiveInnovation { min_eigenvalue: f64 },

    #[error("no-odometry mode requires a reference rest pose for contact {0}")]
    MissingReference(ContactId),

    #[error("contact {0} was added without an initial rest pose")]
    MissingRestGuess(ContactId),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;
