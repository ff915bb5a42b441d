//! Point-voxel fusion scene-flow estimation.
//!
//! Two point clouds are embedded by a shared encoder that sums a point
//! branch (SetConv) and a voxel branch (windowed sparse attention) at three
//! scales, on top of umbrella surface features. Embeddings are matched with a
//! cosine cost and entropic optimal transport; the resulting soft
//! correspondences give an initial flow that is then refined by smoothing
//! gradient descent.

pub mod autodiff;
pub mod cli;
pub mod correspondence;
pub mod error;
pub mod fit;
pub mod fusion;
pub mod geometry;
pub mod gradsuite;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod params;
pub mod point;
pub mod tensor;
pub mod voxel;

pub use correspondence::{estimate, estimate_detailed, FlowField, FlowStage};
pub use error::{Error, Result};
pub use fusion::{embed, CloudContext, FeatureMatrix};
pub use geometry::PointCloud;
pub use io::Config;
pub use params::{init_weights, Weights};
pub use tensor::Tensor2;
