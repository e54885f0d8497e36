use thiserror::Error;

/// Errors raised by the numeric and evaluation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input lies outside the domain of the function it was passed to.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {len} bins")]
    Index { index: usize, len: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid probability distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// No eligible sample exists for a statistic (e.g. MALE without depth-annotated TPs).
    #[error("no eligible sample: {0}")]
    NoSample(String),
}

pub type Result<T> = std::result::Result<T, Error>;
