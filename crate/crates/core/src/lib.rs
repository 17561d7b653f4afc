//! Data model, phantoms, volumetric transforms, landmark-preserving
//! augmentation and localization metrics for 3D landmark detection.

pub mod augment;
pub mod error;
pub mod eval;
pub mod fft;
pub mod intensity;
pub mod landmarks;
pub mod rng;
pub mod scalar;
pub mod spatial;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use landmarks::{Landmark, LandmarkSet};
pub use scalar::Scalar;
pub use volume::{Volume, Volume3};

/// Single-precision volume, the storage type.
pub type Volume32 = Volume<f32>;
/// Double-precision volume.
pub type Volume64 = Volume<f64>;
