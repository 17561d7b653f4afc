//! Landmark heatmap network: a tape-based autodiff engine, the heatmap losses,
//! a dilated residual 3D CNN with training and checkpoints, and 3D Grad-CAM.
//!
//! Everything numeric is generic over [`Scalar`]; train in `f32`, check
//! gradients in `f64`.

pub mod checkpoint;
mod conv;
pub mod error;
pub mod gradcam;
pub mod heatmap;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use brainmark_core::Scalar;
pub use error::{Error, Result};
pub use gradcam::{CamMap, CamRequest, Plane};
pub use heatmap::{HeatmapStack, LossValue};
pub use model::{Mode, Model, ModelConfig};
pub use tensor::{Graph, NodeId, Tensor};
pub use train::{Sample, TrainState};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type TrainState32 = TrainState<f32>;
