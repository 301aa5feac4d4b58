//! Dense NCHW tensors, forward kernels and tape-based reverse-mode gradients.

mod conv;
mod elementwise;
mod fastmath;
mod fft;
pub mod gradcheck;
mod grid;
mod norm;
mod params;
mod resize;
mod shuffle;
mod tape;

pub(crate) use grid::check_same_shape;
pub use conv::{conv2d, conv_out_len, depthwise_conv2d, linear};
pub use fastmath::expm1_fast;
pub(crate) use fft::fft2_planes;
pub use elementwise::{sigmoid, sigmoid_scalar, silu, silu_scalar, softplus_scalar};
pub use grid::{Grid, Shape};
pub use norm::{layer_norm, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore};
pub use resize::{bicubic_resize, bicubic_resize_to, cubic_weight, CATMULL_ROM_A};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use tape::{BackwardFn, Gradients, Tape, Var};
