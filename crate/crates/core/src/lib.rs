//! DummyNet: controlled pedestrian data augmentation.
//!
//! Numeric code is generic over `f32`/`f64` through [`dummynet_nn::Scalar`];
//! the aliases below fix the precision used by the pipeline.

pub mod appearance;
pub mod compositor;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod gan;
pub mod generator;
pub mod image;
pub mod losses;
pub mod mask;
pub mod pipeline;
pub mod placement;
pub mod pose;
pub mod rng;
pub mod synth;
pub(crate) mod train_util;

pub use error::{Error, Result};
pub use train_util::TrainReport;

pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type Mask32 = image::MaskImage<f32>;
pub type Mask64 = image::MaskImage<f64>;
pub type Skeleton32 = pose::Skeleton<f32>;
pub type Skeleton64 = pose::Skeleton<f64>;
