use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad input: shapes, ranges, nonpositive coefficients.
    #[error("validation error: {0}")]
    Validation(String),

    /// A numerical procedure did not reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A time step could not be completed, even after the dt-halving retry.
    #[error("step failed at t = {t:.6e} s: {reason}")]
    StepFailure { t: f64, reason: String },

    /// Every schema violation found in a config document.
    #[error("invalid config:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// True for failures caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::StepFailure { .. })
    }
}
