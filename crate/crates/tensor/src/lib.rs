//! Minimal tensor engine for fully convolutional segmentation networks.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the training code
//! runs in `f32`, while gradient checks use `f64`.

pub mod graph;
pub mod kernels;
mod scalar;
mod tensor;

pub use graph::Var;
pub use kernels::PoolIndices;
pub use scalar::{gemm, Layout, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Var32 = Var<f32>;
pub type Var64 = Var<f64>;
