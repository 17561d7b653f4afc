use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch normalization needs at least 2 values per channel, got {0}")]
    DegenerateBatch(usize),
    #[error("backward needs a scalar loss, node has {0} elements")]
    NonScalarLoss(usize),
    #[error("every landmark is masked; loss is undefined")]
    EmptyMask,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("no hookable layer named {0:?}")]
    HookLayerMissing(String),
    #[error("landmark index {0} outside 1..={1}")]
    LandmarkIndex(usize, usize),
    #[error("cam map is identically zero")]
    ZeroMass,
    #[error("non-finite value during {0}")]
    NonFinite(&'static str),
    #[error("{path}: bad checkpoint: {reason}")]
    BadCheckpoint { path: PathBuf, reason: String },
    #[error("image encoding failed: {0}")]
    Image(String),
    #[error(transparent)]
    Core(#[from] brainmark_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
