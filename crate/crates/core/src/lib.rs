//! Deterministic video inpainting built on latent diffusion.
//!
//! The crate edits short RGB clips: given per-frame masks and an optional
//! text prompt, it inverts each frame's latent to the noisiest inference
//! timestep, then denoises all frames jointly with cross-frame extended
//! attention, classifier-free guidance and DDIM sampling, and decodes the
//! result back to 8-bit frames. Everything — codec projection, text
//! embedding, denoiser weights, batch partitions — derives from explicit
//! seeds, so a run is reproducible bit-for-bit, including under the
//! built-in parallelism.
//!
//! Module map:
//! - [`tensor`], [`scalar`], [`rng`], [`image`], [`error`]: small dense
//!   tensors generic over `f32`/`f64`, seeded randomness, 8-bit frame I/O.
//! - [`codec`]: fixed orthonormal projection between RGB pixels and 4-channel
//!   latents at 1/8 spatial resolution.
//! - [`conditioning`]: prompt embeddings, mask binarization and the
//!   9-channel denoiser input (noisy latent + masked-image latent + mask).
//! - [`attention`], [`denoiser`], [`weights`]: the noise-prediction U-Net,
//!   its per-frame and cross-frame attention, and its weight file format.
//! - [`schedule`]: the DDIM timestep grid, denoising steps and the
//!   memory-bounded inversion that retains one latent per frame.
//! - [`pipeline`]: the end-to-end edit with task presets and a
//!   reproducibility manifest.
//! - [`metrics`]: PSNR, SSIM and masked temporal-consistency scoring.
//!
//! The numeric kernels are generic over [`Scalar`]; [`Tensor32`] and
//! [`Tensor64`] name the two concrete instantiations, and `f32` is the
//! default used throughout the pipeline.

pub mod attention;
pub mod codec;
pub mod conditioning;
pub mod denoiser;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod schedule;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Single-precision tensor, the pipeline's working type.
pub type Tensor32 = Tensor<f32>;
/// Double-precision tensor, used by oracles and high-accuracy checks.
pub type Tensor64 = Tensor<f64>;
