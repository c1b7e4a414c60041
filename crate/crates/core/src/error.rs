use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Every weight, including the test-point weight, is zero.
    #[error("degenerate weights: total mass is zero")]
    DegenerateWeights,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty fold: {0}")]
    EmptyFold(String),

    /// Propensity fitting needs both arms present.
    #[error("degenerate treatment arm: {0}")]
    DegenerateTreatmentArm(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
