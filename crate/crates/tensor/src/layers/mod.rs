//! Parameterised and fixed neural-network layers.

mod batchnorm;
mod conv;
pub mod init;
mod linear;
mod pool;
mod shuffle;
mod upsample;

pub use batchnorm::{BatchNorm2d, Mode};
pub use conv::{conv2d, conv2d_direct, conv_output_hw, conv_transpose2d, Conv2d, ConvSpec, ConvTranspose2d};
pub use linear::{linear, Linear};
pub use pool::{Pool2d, PoolKind};
pub use shuffle::{pixel_shuffle, pixel_unshuffle};
pub use upsample::{upsample_bilinear, upsample_nearest, UpsampleMode};
