use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The Lyapunov equation has no positive-definite solution (A not Hurwitz).
    #[error("no solution: {0}")]
    NoSolution(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// Power window has not yet collected a full period of samples.
    #[error("power window not ready ({filled}/{capacity} samples)")]
    NotReady { filled: usize, capacity: usize },

    #[error("no stability boundary in [{lo}, {hi}]")]
    NoBoundary { lo: f64, hi: f64 },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite, got {value}")))
    }
}

pub(crate) fn ensure_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
