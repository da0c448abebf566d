//! Core of the JICD codec: a learned image codec whose quantized latent space
//! is split into a base layer (decodes a denoised image) and an enhancement
//! layer (together with the base, decodes the noisy input).
//!
//! Everything in this crate is pure computation over in-memory buffers:
//! the neural transforms and their autodiff graph, quantization and entropy
//! models, the range coder and bitstream container, noise synthesis, the
//! rate-distortion training step, and the evaluation metrics (PSNR, BD-rate).
//! File formats, PNG handling and the command-line tool live in the `jicd-cli`
//! companion crate.
//!
//! The crate is `no_std` (with `alloc`); float math goes through `num-traits`
//! and `libm`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod checkpoint;
pub mod coder;
pub mod container;
pub mod entropy;
pub mod graph;
pub mod image;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod pad;
pub mod pipeline;
pub mod rd;
pub mod scalar;
pub mod synthetic;
pub mod train;

pub use image::ImageBuffer;
pub use model::{ModelConfig, ParamSet, Profile};
pub use noise::NoiseSpec;
pub use scalar::Scalar;
