use thiserror::Error;

/// Errors raised across model construction, signal handling, propagation and
/// pulse synthesis.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid level index: {0}")]
    InvalidIndex(String),

    #[error("truncation {requested} exceeds the {available} levels defined by model '{model}'")]
    TruncationTooLarge {
        model: String,
        requested: usize,
        available: usize,
    },

    #[error("coupling operator is not skew-adjoint at ({row}, {col}): deviation {deviation:e}")]
    NotSkewAdjoint {
        row: usize,
        col: usize,
        deviation: f64,
    },

    #[error("generator is not Hermitian (deviation {0:e}); the operator data is corrupted")]
    NonHermitian(f64),

    #[error("eigendecomposition did not converge")]
    EigenFailure,

    #[error("control amplitude {max_abs} is not below the admissible limit 1/‖B‖_A = {limit}")]
    AmplitudeLimit { max_abs: f64, limit: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("state norm {0} differs from 1")]
    NotNormalized(f64),

    #[error("transition ({j}, {k}) is not usable: {reason}")]
    DegenerateTransition { j: usize, k: usize, reason: String },

    #[error("resonance condition violated for pair ({l}, {m}): coefficient ratio {ratio:e}")]
    ResonanceViolation { l: usize, m: usize, ratio: f64 },

    #[error("invalid signal: {0}")]
    InvalidSignal(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// Broad classification used to map failures onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: malformed files, invalid parameters, inconsistent configuration.
    Config,
    /// A mathematical precondition of the run does not hold (amplitude, degeneracy).
    Precondition,
    /// Numerical failure inside the solver.
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::AmplitudeLimit { .. }
            | Error::DegenerateTransition { .. }
            | Error::ResonanceViolation { .. }
            | Error::NotNormalized(_) => ErrorClass::Precondition,
            Error::NonHermitian(_) | Error::EigenFailure => ErrorClass::Numerical,
            _ => ErrorClass::Config,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
