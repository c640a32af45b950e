use thiserror::Error;

/// Errors raised anywhere in the laboratory.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("point outside domain: {0}")]
    Domain(String),
    #[error("factorization breakdown at pivot {pivot} (value {value:e})")]
    Factorization { pivot: usize, value: f64 },
    #[error("eigensolver did not converge after {iterations} iterations ({converged} of {wanted} pairs)")]
    NonConvergence {
        iterations: usize,
        converged: usize,
        wanted: usize,
        partial: Vec<f64>,
    },
    #[error("mesh generation failed: {0}")]
    Mesh(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
