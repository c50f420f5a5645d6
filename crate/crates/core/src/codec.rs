//! Deterministic linear image codec standing in for a pretrained VAE.
//!
//! Frames are packed by `space_to_depth(8)` into 192 channels and projected
//! per pixel onto 4 latent channels by a seeded row-orthonormal matrix, so
//! latents keep the 4-channel, 1/8-resolution geometry of a latent
//! diffusion autoencoder. Because `P * P^T = I`, the latent-side round trip
//! `encode(decode(z)) = z` holds to float precision and `decode(encode(x))`
//! is an orthogonal projection of the image.

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latent channel count.
pub const LATENT_CHANNELS: usize = 4;
/// Spatial reduction factor between image and latent.
pub const SPATIAL_FACTOR: usize = 8;
/// Channels after space-to-depth packing of an RGB frame.
pub const PACKED_CHANNELS: usize = 3 * SPATIAL_FACTOR * SPATIAL_FACTOR;

/// Default codec seed.
pub const DEFAULT_CODEC_SEED: u64 = 7;

/// Seeded projection pair defining the codec. Immutable after construction.
#[derive(Debug, Clone)]
pub struct CodecParams<T = f32> {
    /// `[4, 192]`, rows orthonormal.
    projection: Tensor<T>,
    /// `[192, 4]`, transpose of `projection`.
    projection_t: Tensor<T>,
    seed: u64,
}

impl<T: Scalar> CodecParams<T> {
    /// Regenerates the projection from `seed`: a Gaussian `[4, 192]` draw
    /// made row-orthonormal by Gram-Schmidt (run in `f64`, then cast).
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let mut rows: Vec<Vec<f64>> = (0..LATENT_CHANNELS)
            .map(|_| (0..PACKED_CHANNELS).map(|_| rng::normal_f64(&mut rng)).collect())
            .collect();
        for i in 0..rows.len() {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                for k in 0..PACKED_CHANNELS {
                    rows[i][k] -= dot * rows[j][k];
                }
            }
            let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in rows[i].iter_mut() {
                *v /= norm;
            }
        }
        let flat: Vec<T> = rows
            .iter()
            .flat_map(|r| r.iter().map(|&v| T::from_f64_lossy(v)))
            .collect();
        let projection = Tensor::new(vec![LATENT_CHANNELS, PACKED_CHANNELS], flat).unwrap();
        let projection_t = projection.transpose2d().unwrap();
        Self {
            projection,
            projection_t,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Tensor<T> {
        &self.projection
    }

    /// `[3, H, W]` image in `[0, 1]` to `[4, H/8, W/8]` latent. Linear in
    /// the input.
    pub fn encode(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, h, w] = shape3(image, "encode")?;
        if c != 3 {
            return Err(Error::shape("encode", format!("expected 3 channels, got {c}")));
        }
        if h % SPATIAL_FACTOR != 0 || w % SPATIAL_FACTOR != 0 {
            return Err(Error::shape(
                "encode",
                format!("spatial dims {h}x{w} not divisible by {SPATIAL_FACTOR}"),
            ));
        }
        let packed = image.space_to_depth(SPATIAL_FACTOR)?;
        let (lh, lw) = (h / SPATIAL_FACTOR, w / SPATIAL_FACTOR);
        let flat = packed.reshape(&[PACKED_CHANNELS, lh * lw])?;
        self.projection
            .matmul(&flat)?
            .reshape(&[LATENT_CHANNELS, lh, lw])
    }

    /// `[4, H', W']` latent to `[3, 8H', 8W']` image. No clamping here;
    /// values are clamped only when frames are emitted as 8-bit.
    pub fn decode(&self, latent: &Tensor<T>) -> Result<Tensor<T>> {
        let [c, lh, lw] = shape3(latent, "decode")?;
        if c != LATENT_CHANNELS {
            return Err(Error::shape(
                "decode",
                format!("expected {LATENT_CHANNELS} latent channels, got {c}"),
            ));
        }
        let flat = latent.clone().reshape(&[LATENT_CHANNELS, lh * lw])?;
        let packed = self
            .projection_t
            .matmul(&flat)?
            .reshape(&[PACKED_CHANNELS, lh, lw])?;
        packed.depth_to_space(SPATIAL_FACTOR)
    }
}

fn shape3<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 3]> {
    match t.shape() {
        [a, b, c] => Ok([*a, *b, *c]),
        other => Err(Error::shape(op, format!("expected rank-3 tensor, got {other:?}"))),
    }
}
