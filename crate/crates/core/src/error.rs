use thiserror::Error;

/// Errors produced by the simulator and optimizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The request exceeds what the implementation supports (e.g. LLR enumeration size).
    #[error("capability exceeded: {0}")]
    Capability(String),

    /// A linear system was singular or too badly conditioned to solve.
    #[error("numerical failure in {what}: condition number {condition:e}")]
    Numerical { what: &'static str, condition: f64 },

    /// Inputs of inconsistent dimensions.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
