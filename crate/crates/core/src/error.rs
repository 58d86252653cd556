use alloc::string::String;

/// Errors raised by the model primitives, the sampler and the analytics.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A distribution or model parameter is outside its valid range.
    #[error("invalid parameter `{name}` = {value}")]
    Parameter { name: &'static str, value: f64 },
    /// An argument lies outside the domain of the function.
    #[error("`{name}` = {value} is outside the domain of the function")]
    Domain { name: &'static str, value: f64 },
    /// Every kernel weight underflows at this location.
    #[error("location ({x}, {y}) is {ratio:.1} bandwidths from the nearest knot")]
    DegenerateLocation { x: f64, y: f64, ratio: f64 },
    /// A factorization or other numerical routine failed.
    #[error("numerical failure: {0}")]
    Numerical(&'static str),
    /// Inputs are inconsistent with each other (lengths, site sets, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// The sampler could not start from a state with finite likelihood.
    #[error("initialization failed: {0}")]
    Initialization(String),
    /// An operation was called outside of the phase it is valid in.
    #[error("contract violation: {0}")]
    Contract(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
