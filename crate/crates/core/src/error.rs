use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("calibration trace does not span the resonance: {0}")]
    InsufficientSpan(String),
    #[error("trace too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },
    #[error("no PSD bins inside band [{lo}, {hi}] Hz")]
    BandEmpty { lo: f64, hi: f64 },
    #[error("tau {tau} s out of range: {reason}")]
    TauOutOfRange { tau: f64, reason: String },
    #[error("mixture component {component} collapsed (stddev {std:e})")]
    Degenerate { component: usize, std: f64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("resonance not found: {0}")]
    NotFound(String),
    #[error("step '{step}' failed: {source}")]
    Step {
        step: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Innermost error, looking through `Step` wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
