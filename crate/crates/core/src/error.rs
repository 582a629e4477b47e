use thiserror::Error;

use crate::spectroscopy::MorsFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("degenerate measurement: quadrature variance {variance:e} is below {tolerance:e}")]
    DegenerateMeasurement { variance: f64, tolerance: f64 },

    #[error("detuning {detuning_mhz} MHz sits on an excited-state pole")]
    Pole { detuning_mhz: f64 },

    #[error("fit failed after {iterations} iterations: {reason}")]
    FitFailure {
        iterations: usize,
        reason: String,
        best: Option<Box<MorsFit>>,
    },

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad user input (configuration, files,
    /// argument ranges) rather than by a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Toml(_)
                | Error::Csv(_)
                | Error::Pole { .. }
        )
    }
}
