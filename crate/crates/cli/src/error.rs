use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl From<robust_conformal::Error> for CliError {
    fn from(e: robust_conformal::Error) -> Self {
        use robust_conformal::Error as E;
        match e {
            E::DegenerateWeights | E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::InvalidInput(_) | E::EmptyFold(_) | E::DegenerateTreatmentArm(_) => CliError::Data(e.to_string()),
        }
    }
}
