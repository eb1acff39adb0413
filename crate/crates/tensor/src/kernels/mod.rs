//! Forward and backward kernels on plain tensors. The autodiff layer in
//! [`crate::graph`] wires these together; they are also usable directly.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod resize;

pub use conv::{conv2d, conv2d_backward, conv_transpose2x2, conv_transpose2x2_backward};
pub use norm::{batch_norm_eval, batch_norm_train, batch_norm_train_backward, BatchStats};
pub use pool::{max_pool2x2, max_pool2x2_backward, max_unpool2x2, max_unpool2x2_backward, PoolIndices};
pub use resize::{area_downsample, resize_bilinear, resize_bilinear_backward};
