use thiserror::Error;

/// Errors raised by the estimators, objectives and training loop.
#[derive(Debug, Error)]
pub enum Error {
    #[error("probability vector must have at least one entry")]
    EmptyTheta,

    #[error("theta[{index}] = {value} is outside [0, 1]")]
    ThetaOutOfRange { index: usize, value: f64 },

    #[error("theta[{index}] = {value} is at an endpoint; this operation needs 0 < theta < 1")]
    ThetaAtEndpoint { index: usize, value: f64 },

    #[error("logit[{index}] = {value} is not finite")]
    NonFiniteLogit { index: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("exact enumeration over K = {k} coordinates exceeds the guard of {max}")]
    EnumerationTooLarge { k: usize, max: usize },

    #[error("tau = {0} is outside (0, 0.5]")]
    InvalidTau(f64),

    #[error("at least {min} Monte Carlo samples are required, got {got}")]
    TooFewSamples { min: usize, got: usize },

    #[error("true support is empty")]
    EmptySupport,

    #[error("objective returned a non-finite value {0}")]
    NonFiniteObjective(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training aborted at iteration {iteration}: {source}")]
    RunAborted {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
