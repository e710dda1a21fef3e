//! The small differentiable core everything else is composed from.
//!
//! Gradients are written by hand per operation; there is no autodiff graph.
//! Every backward pass in this module is checked against central finite
//! differences in the unit tests.

mod act;
mod conv;
mod filter;
mod layers;
mod optim;
pub mod pfr;
mod raster;
mod rng;

pub use act::{gelu, gelu_grad, leaky_relu, leaky_relu_grad, sigmoid, Activation};
pub use conv::{conv2d, conv2d_backward, ConvSpec, Kernel, Padding};
pub use filter::{
    area_downsample_backward, avgpool_global, bicubic_upsample, bilinear_upsample, blur,
    downsample, footprint_degrade, footprint_taps, gaussian_kernel, laplacian, nearest_upsample,
    nearest_upsample_backward, Align, DownsampleMode, Kernel2d,
};
pub use layers::{Conv2d, Linear, ResBlock, ResCache};
pub use optim::{AdamW, AdamWConfig, Ema, Param, Parameterized};
pub use raster::{Precision, Raster, Shape, ValueRange};
pub use rng::{RngState, SeededRng};
