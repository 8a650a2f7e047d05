//! Pyramid attention for image restoration.
//!
//! This crate implements a multi-scale, block-matched non-local attention
//! operator together with everything needed to train and inspect it on CPU:
//!
//! - [`tensor`]: dense rank-4 tensors (batch, channel, height, width) and the
//!   minimal differentiable operator set (convolution, transposed convolution,
//!   bicubic rescaling, softmax, elementwise ops).
//! - [`graph`]: a first-order reverse-mode tape over those operators.
//! - [`attention`]: classic non-local attention, scale-agnostic attention and
//!   the pyramid attention operator built from patch extraction, convolution,
//!   a joint softmax and transposed convolution.
//! - [`network`]: the residual restoration network (PANet) with configurable
//!   attention insertion points and exact parameter accounting.
//! - [`train`]: a desk-scale denoising trainer (random crops, dihedral
//!   augmentation, additive white Gaussian noise, Adam, halving schedule).
//! - [`metrics`] / [`imageio`]: PSNR/SSIM and 8-bit PNG I/O.
//! - [`export`]: attention-map export for a chosen query position.
//! - [`gradcheck`]: finite-difference validation of every backward rule.
//! - [`cli`]: the `pyratten` command line (`train`, `denoise`, `eval`,
//!   `attnmap`, `gradcheck`, `params`).
//!
//! See the crate `examples/` directory for one runnable program per major
//! capability.

pub mod attention;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod graph;
pub mod imageio;
pub mod metrics;
pub mod network;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

mod parallel;

pub use error::{Error, Result};
pub use tensor::{ConvSpec, Elem, Tensor};
