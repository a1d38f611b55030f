use thiserror::Error;

/// Errors raised by the solver crate.
#[derive(Debug, Error)]
pub enum KineticError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("singular input: {0}")]
    Singular(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KineticError {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        KineticError::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, KineticError>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(KineticError::SizeMismatch { expected, got })
    }
}
