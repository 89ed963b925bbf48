use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Block structure of an element or map does not match its algebra.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A documented precondition of an operation was violated.
    #[error("contract violation in {module}: {message}")]
    Contract {
        module: &'static str,
        message: String,
    },
    #[error("projection not found in tabulated measure (closest distance {distance:.3e})")]
    Lookup { distance: f64 },
    #[error("tabulated projections span a subspace of rank {rank}, need {required}")]
    Underdetermined { rank: usize, required: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(module: &'static str, message: impl Into<String>) -> Self {
        Error::Contract {
            module,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
