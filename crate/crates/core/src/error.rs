use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or argument is outside its valid domain.
    #[error("invalid {field}: {reason}")]
    InvalidParam { field: String, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("hierarchy not converged after depth {depth} / {n_matsubara} Matsubara terms (residual {residual:.3e})")]
    NotConverged {
        depth: usize,
        n_matsubara: usize,
        residual: f64,
    },

    /// NaN or overflow during a numerical stage.
    #[error("non-finite value in {stage} at index {index}")]
    NonFinite { stage: String, index: usize },

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("missing input artifact {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn non_finite(stage: impl Into<String>, index: usize) -> Self {
        Error::NonFinite {
            stage: stage.into(),
            index,
        }
    }
}
