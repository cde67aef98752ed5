use thiserror::Error;

/// Errors raised by the power-control library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Unknown registry name or unparseable spec string.
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Operation not defined for the given input (e.g. unbounded utility).
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// Bracketing, bisection or iteration failure.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// A policy asked for more energy than the battery holds.
    #[error("feasibility violation at slot {slot}: power {power} exceeds battery {battery}")]
    Feasibility { slot: usize, battery: f64, power: f64 },
}

impl Error {
    /// True for errors caused by bad user input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Domain(_) | Error::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
