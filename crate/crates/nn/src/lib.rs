//! Small CPU neural-network toolkit: dense arrays, a tape-based autodiff that
//! supports gradients of gradients, common layers, and optimizers.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`).

mod array;
pub mod checkpoint;
pub mod kernels;
pub mod layers;
pub mod optim;
pub mod resample;
mod scalar;
mod tape;

pub use array::Array;
pub use kernels::ConvGeom;
pub use layers::{Bound, Conv2d, Linear, Param, ParamId, ParamStore};
pub use optim::{Adam, Sgd};
pub use resample::ResamplePlan;
pub use scalar::{gemm, MatRef, Scalar};
pub use tape::{Tape, Var};

pub type Array32 = Array<f32>;
pub type Array64 = Array<f64>;
