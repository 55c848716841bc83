//! Single-scene 3D generative pipeline.
//!
//! A voxel ReLU field is fitted to posed images by differentiable
//! emission-absorption raymarching ([`reconstruction`]); a progressive
//! multi-scale patch GAN with 2D and 3D critics then learns to remix the
//! fitted scene ([`remix_gan`]); [`metrics`] scores visual quality and
//! scene diversity of the result.

pub mod error;
pub mod image;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod reconstruction;
pub mod remix_gan;
pub mod relu_field;
pub mod renderer;
pub mod scene_io;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use image::{psnr, Image};
pub use relu_field::{Aabb, FeatureGrid, FieldSample};
pub use renderer::{PoseModel, Ray, RenderConfig, SamplingPolicy};
pub use scene_io::{Camera, PosedImageSet};
pub use tensor::Tensor;
