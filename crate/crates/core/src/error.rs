use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: Shape, actual: Shape },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },

    #[error("inverse transform left imaginary residue {residue:e} (limit {limit:e})")]
    ImaginaryResidue { residue: f64, limit: f64 },

    #[error("non-finite value encountered at t={t}: {what}")]
    NonFinite {
        t: usize,
        what: String,
        trace: Box<crate::guidance::RunTrace>,
    },

    #[error("score model does not provide a vector-Jacobian product")]
    VjpUnavailable,

    #[error("score server: {0}")]
    ScoreServer(String),

    #[error("theorem bound violated: {0}")]
    BoundViolation(Box<crate::theory::BoundReport>),

    #[error("malformed operator sidecar: {0}")]
    Sidecar(String),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
