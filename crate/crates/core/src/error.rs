use thiserror::Error;

/// Errors raised by the model, the simulator and the scenario loader.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error{}: {message}", rate.map(|r| format!(" at rate {r}")).unwrap_or_default())]
    Numerical {
        rate: Option<usize>,
        message: String,
    },

    #[error("internal simulator error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical {
            rate: None,
            message: msg.into(),
        }
    }

    /// Tags a numerical error with the rate index it occurred at.
    pub(crate) fn at_rate(self, rate: usize) -> Self {
        match self {
            Error::Numerical { message, .. } => Error::Numerical {
                rate: Some(rate),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
