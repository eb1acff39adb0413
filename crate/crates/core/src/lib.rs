//! Building-footprint segmentation toolkit: tiling and splitting aerial
//! imagery, nine fully convolutional networks, a training loop, pixel
//! metrics, qualitative figures and a throughput benchmark.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the element type for the common cases.

pub mod bench;
pub mod config;
pub mod datakit;
mod error;
pub mod grid;
pub mod metrics;
pub mod trainer;
pub mod viz;
pub mod zoo;

pub use error::{Error, Result};
pub use grid::{BinaryMap, EdgeMap};
pub use segtensor::{Scalar, Tensor};

pub type Model32 = zoo::Model<f32>;
pub type Model64 = zoo::Model<f64>;
pub type BatchOutput32 = zoo::BatchOutput<f32>;
pub type BatchOutput64 = zoo::BatchOutput<f64>;
pub type MetricsReport32 = metrics::MetricsReport<f32>;
pub type MetricsReport64 = metrics::MetricsReport<f64>;
