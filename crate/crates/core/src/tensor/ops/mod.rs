//! Forward kernels and their recorded (differentiable) counterparts on [`Graph`](super::Graph).

mod activation;
mod basic;
mod conv;
mod norm;
mod pool;
mod softmax;

pub use activation::prelu;
pub use basic::stack_slices;
pub use conv::{conv2d, conv2d_backward, Padding};
pub use norm::{batch_norm, batch_stats, BatchNormMode, BatchStats};
pub use pool::{maxpool2, upsample_bilinear2};
pub use softmax::{soft_argmax, soft_argmax_axis, softmax};
