use thiserror::Error;

/// Everything that can go wrong while solving or simulating.
///
/// `InvalidInput` means the caller handed us something malformed (bad
/// parameters, a rate outside the admissible band, a non-increasing grid).
/// The other variants are numerical failures: the inputs were legal but an
/// iteration did not land where theory says it should, and the message
/// carries enough context to reproduce the failure.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bracketing failed: {0}")]
    Bracket(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("free-boundary integration degenerated at c = {c}: {reason}")]
    DegenerateCurve { c: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidInput(msg.into())
    }

    pub(crate) fn bracket(msg: impl Into<String>) -> Self {
        CoreError::Bracket(msg.into())
    }
}
