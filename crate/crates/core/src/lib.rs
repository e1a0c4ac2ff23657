//! Poisson image denoising toolkit.
//!
//! The pipeline: scale a clean grayscale image to a peak intensity, corrupt
//! it with Poisson noise ([`noise_vst`]), then denoise either through the
//! Anscombe transform with a Gaussian denoiser or with a two-branch
//! convolutional autoencoder ([`model`]) applied patch-wise and stitched back
//! with Gaussian overlap weights ([`patchwork`]). [`eval_stats`] scores the
//! results with PSNR and paired t-tests.

pub mod config;
pub mod error;
pub mod eval_stats;
pub mod imageio;
pub mod kv;
pub mod model;
pub mod noise_vst;
pub mod nn;
pub mod patchwork;
pub mod report;
pub mod rng;
pub mod special;
pub mod synthetic;

pub use error::{Error, Result};
pub use imageio::Image;
