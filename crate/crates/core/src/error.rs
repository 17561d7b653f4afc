use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic bytes in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("unsupported file version {0}")]
    UnsupportedVersion(u32),

    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("volume dimensions must be positive, got {0:?}")]
    NonPositiveDims([usize; 3]),

    #[error("voxel spacing must be positive, got {0:?}")]
    NonPositiveSpacing([f32; 3]),

    #[error("volume data length {found} does not match dims product {expected}")]
    DataLength { expected: usize, found: usize },

    #[error("non-finite intensity at linear index {0}")]
    NonFinite(usize),

    #[error("duplicate landmark id {0}")]
    DuplicateId(u32),

    #[error("landmark {id} at {p:?} lies outside volume dims {dims:?}")]
    OutOfBounds { id: u32, p: [f64; 3], dims: [usize; 3] },

    #[error("point {p:?} lies outside volume dims {dims:?}")]
    PointOutOfBounds { p: [f64; 3], dims: [usize; 3] },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("cannot place {k} landmarks inside the phantom ellipsoid")]
    InfeasiblePlacement { k: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("landmark id mismatch: {0}")]
    IdMismatch(String),

    #[error("nothing to evaluate")]
    EmptySet,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
