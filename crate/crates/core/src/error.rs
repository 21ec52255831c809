use thiserror::Error;

/// Errors raised anywhere in the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A value lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent input data.
    #[error("input error: {0}")]
    Input(String),

    /// Input data rejected at a specific row of a delimited file.
    #[error("input error at row {row}: {message}")]
    InputRow { row: usize, message: String },

    /// Observation times that do not strictly increase.
    #[error("ordering error: observation at t={next} does not follow t={last}")]
    Ordering { last: f64, next: f64 },

    /// A covariance could not be factorised even at the largest jitter.
    #[error("numerical error at time index {index}: {message}")]
    Numerical { index: usize, message: String },

    /// Every particle carries zero weight.
    #[error("degenerate particle set: all weights are zero")]
    DegenerateWeights,

    /// An operation was called without the state it requires.
    #[error("state error: {0}")]
    State(String),

    /// Invalid run configuration.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
