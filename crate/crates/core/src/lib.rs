//! Allocation-only core of a stereo image restoration pipeline guided by
//! latent high-frequency maps estimated with a compact diffusion model.
//!
//! The crate is `no_std` + `alloc`. Everything that touches files, clocks or
//! the process environment lives in the `diffstereo` companion crate.
//!
//! Layout:
//! - [`tensor`], [`autograd`], [`params`]: dense f64 tensors, a reverse-mode
//!   tape and the named parameter store.
//! - [`datapipe`]: degradation synthesis, patching and flips.
//! - [`lren`], [`sirn`], [`diffusion`]: the three networks.
//! - [`losses`], [`metrics`], [`optim`], [`train`]: objectives, PSNR/SSIM,
//!   Adam and the two-stage training loop.

#![no_std]

extern crate alloc;

pub mod autograd;
pub mod datapipe;
pub mod diffusion;
pub mod error;
mod gemm;
pub mod losses;
pub mod lren;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod rng;
pub mod selftest;
pub mod sirn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::ModelParams;
pub use tensor::Tensor;
