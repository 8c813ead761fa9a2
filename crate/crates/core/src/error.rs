use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid shape {shape:?} for {op}: {reason}")]
    InvalidShape { op: &'static str, shape: Vec<usize>, reason: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    #[error("backward requires a scalar (1×1) loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardTwice,

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("rig: {0}")]
    Rig(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error(
        "pruning would remove {removed} of {total} points (> 50%); check camera and mask configuration"
    )]
    PruneTooAggressive { removed: usize, total: usize },

    #[error("camera: {0}")]
    Camera(String),

    #[error("frame {frame}: {reason}")]
    Frame { frame: usize, reason: String },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error("non-finite loss term `{term}` at epoch {epoch}, step {step}")]
    NonFiniteLoss { term: String, epoch: usize, step: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
