//! Crate-wide error type.
//!
//! Variants map onto the CLI exit-code contract: configuration, I/O, domain
//! and size errors are usage problems (exit 2), while infeasibility and
//! singularity are analytic outcomes (exit 1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated (bad dimension, parameter
    /// out of range, asymmetric input where symmetry is required, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// A matrix that must be inverted is singular or too ill-conditioned.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// The requested object provably does not exist for these parameters
    /// (rate outside the admissible interval, no decay onset, ...).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An exact-enumeration request exceeds the supported problem size.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),

    /// Configuration file could not be parsed or failed validation.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Error {
        Error::Domain(msg.into())
    }

    /// Exit code this error maps to under the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Infeasible(_) | Error::Singular(_) => 1,
            _ => 2,
        }
    }
}
