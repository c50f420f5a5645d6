//! 8-bit frames and masks, and their float-tensor conversions.
//!
//! Frames are interleaved RGB (matching PPM byte order), masks are
//! single-channel grayscale. Float tensors are planar `[C, H, W]` in
//! `[0, 1]`; quantization back to 8-bit clamps and rounds half away from
//! zero so emitted frames are bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit image, `channels` = 3 (RGB frame) or 1 (grayscale mask),
/// interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

/// Ordered per-frame RGB images.
pub type FrameSequence = Vec<Image8>;
/// Per-frame masks aligned to a [`FrameSequence`].
pub type MaskSequence = Vec<Image8>;

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::shape(
                "Image8::new",
                format!("channels must be 1 or 3, got {channels}"),
            ));
        }
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "Image8::new",
                format!(
                    "{width}x{height}x{channels} needs {} bytes, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let base = (y * self.width + x) * self.channels;
        &self.data[base..base + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let base = (y * self.width + x) * self.channels;
        &mut self.data[base..base + self.channels]
    }

    /// Planar `[C, H, W]` tensor with values in `[0, 1]` (8-bit / 255).
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let scale = T::from_f64_lossy(1.0 / 255.0);
        Tensor::from_fn(&[c, h, w], |idx| {
            let ch = idx / (h * w);
            let rem = idx % (h * w);
            let (y, x) = (rem / w, rem % w);
            T::from_f64_lossy(self.data[(y * w + x) * c + ch] as f64) * scale
        })
    }

    /// Quantizes a `[C, H, W]` tensor in `[0, 1]` back to 8-bit: clamp to
    /// `[0, 1]`, scale by 255, round half away from zero.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let shape = t.shape();
        let [c, h, w] = match shape {
            [c, h, w] if *c == 1 || *c == 3 => [*c, *h, *w],
            other => {
                return Err(Error::shape(
                    "Image8::from_tensor",
                    format!("expected [1|3, H, W], got {other:?}"),
                ))
            }
        };
        let mut data = vec![0u8; c * h * w];
        let src = t.data();
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let v = src[ch * h * w + y * w + x].to_f64_lossy();
                    data[(y * w + x) * c + ch] = quantize_u8(v);
                }
            }
        }
        Image8::new(w, h, c, data)
    }

    /// True when `(x, y)` is in the edit region under the 8-bit analogue of
    /// the 0.5 binarization threshold (`v/255 >= 0.5` iff `v >= 128`).
    pub fn mask_bit(&self, x: usize, y: usize) -> bool {
        self.pixel(x, y)[0] >= 128
    }
}

/// Clamp to `[0, 1]`, scale to 0..255 and round half away from zero.
pub fn quantize_u8(v: f64) -> u8 {
    let scaled = (v.clamp(0.0, 1.0)) * 255.0;
    // round() in Rust rounds half away from zero, which is the pinned rule.
    scaled.round() as u8
}
