//! Everything the denoiser is conditioned on: toy text embeddings, binary
//! masks, masked images, their latents, and the 9-channel denoiser input.
//!
//! Channel order of the assembled input is fixed:
//! `[noisy latent (4) | masked-image latent (4) | mask latent (1)]`.
//!
//! Mask semantics: 1 marks the region to be edited (inpainted). The mask
//! latent is the nearest-downsampled binary mask itself at latent
//! resolution, not an encoding of the mask through the codec.

use crate::codec::{CodecParams, LATENT_CHANNELS, SPATIAL_FACTOR};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Token slots per prompt.
pub const TEXT_TOKENS: usize = 16;
/// Embedding width per token.
pub const TEXT_DIM: usize = 64;
/// Hash-table vocabulary size.
pub const TEXT_VOCAB: usize = 4096;
/// Default seed for the embedding table.
pub const DEFAULT_TEXT_SEED: u64 = 101;

/// `[16, 64]` token embedding sequence. The all-zeros sequence is the
/// unconditional embedding.
pub type TextEmbedding<T = f32> = Tensor<T>;

/// Deterministic prompt embedder: lowercase, whitespace tokenization,
/// FNV-hashed lookup into a seeded table, zero-padded to 16 tokens.
#[derive(Debug, Clone)]
pub struct TextEmbedder<T = f32> {
    table: Vec<T>,
    seed: u64,
}

impl<T: Scalar> TextEmbedder<T> {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let table = (0..TEXT_VOCAB * TEXT_DIM)
            .map(|_| T::from_f64_lossy(rng::normal_f64(&mut rng)))
            .collect();
        Self { table, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Embeds a prompt. The empty prompt yields the all-zeros sequence.
    pub fn embed(&self, prompt: &str) -> TextEmbedding<T> {
        let lowered = prompt.to_lowercase();
        let mut data = vec![T::zero(); TEXT_TOKENS * TEXT_DIM];
        for (slot, token) in lowered.split_whitespace().take(TEXT_TOKENS).enumerate() {
            let row = (rng::fnv1a64(token.as_bytes()) % TEXT_VOCAB as u64) as usize;
            data[slot * TEXT_DIM..(slot + 1) * TEXT_DIM]
                .copy_from_slice(&self.table[row * TEXT_DIM..(row + 1) * TEXT_DIM]);
        }
        Tensor::new(vec![TEXT_TOKENS, TEXT_DIM], data).unwrap()
    }

    /// The unconditional (empty prompt) embedding.
    pub fn uncond(&self) -> TextEmbedding<T> {
        Tensor::zeros(&[TEXT_TOKENS, TEXT_DIM])
    }
}

/// Threshold a `[1, H, W]` mask at 0.5 (0.5 itself maps to 1). 1 = edit
/// region. Idempotent.
pub fn binarize_mask<T: Scalar>(mask: &Tensor<T>) -> Result<Tensor<T>> {
    expect_mask_shape(mask, "binarize_mask")?;
    let half = T::from_f64_lossy(0.5);
    Ok(mask.map(|v| if v >= half { T::one() } else { T::zero() }))
}

/// Blacks out the edit region: `image * (1 - mask)` broadcast over the
/// three color channels. Expects a binarized mask.
pub fn make_masked_image<T: Scalar>(image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = expect_image_shape(image, "make_masked_image")?;
    let [mh, mw] = expect_mask_shape(mask, "make_masked_image")?;
    if (mh, mw) != (h, w) {
        return Err(Error::shape(
            "make_masked_image",
            format!("image is {h}x{w} but mask is {mh}x{mw}"),
        ));
    }
    let mut out = image.clone();
    let data = out.data_mut();
    for (p, &m) in mask.data().iter().enumerate() {
        if m > T::zero() {
            for ch in 0..c {
                data[ch * h * w + p] = T::zero();
            }
        }
    }
    Ok(out)
}

/// Per-frame conditioning consumed by the denoiser and the scheduler.
#[derive(Debug, Clone)]
pub struct ConditioningBundle<T = f32> {
    /// `[4, H/8, W/8]`: codec encoding of the blacked-out frame.
    pub masked_latent: Tensor<T>,
    /// `[1, H/8, W/8]`: binary mask at latent resolution, values in {0, 1}.
    pub mask_latent: Tensor<T>,
    /// Prompt embedding.
    pub text: TextEmbedding<T>,
    /// Empty-prompt embedding (all zeros).
    pub uncond_text: TextEmbedding<T>,
}

/// Builds the full conditioning for one frame: binarize the mask, black out
/// the edit region, encode it, downsample the mask to latent resolution and
/// embed the prompt (plus the unconditional embedding).
pub fn build_bundle<T: Scalar>(
    codec: &CodecParams<T>,
    embedder: &TextEmbedder<T>,
    image: &Tensor<T>,
    mask: &Tensor<T>,
    prompt: &str,
) -> Result<ConditioningBundle<T>> {
    let binary = binarize_mask(mask)?;
    let masked = make_masked_image(image, &binary)?;
    let masked_latent = codec.encode(&masked)?;
    let mask_latent = binary.nearest_downsample(SPATIAL_FACTOR)?;
    Ok(ConditioningBundle {
        masked_latent,
        mask_latent,
        text: embedder.embed(prompt),
        uncond_text: embedder.uncond(),
    })
}

/// Concatenates `[noisy (4) | masked latent (4) | mask latent (1)]` into
/// the 9-channel denoiser input.
pub fn assemble_unet_input<T: Scalar>(
    noisy_latent: &Tensor<T>,
    bundle: &ConditioningBundle<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = match noisy_latent.shape() {
        [c, h, w] => [*c, *h, *w],
        other => {
            return Err(Error::shape(
                "assemble_unet_input",
                format!("expected rank-3 noisy latent, got {other:?}"),
            ))
        }
    };
    if c != LATENT_CHANNELS {
        return Err(Error::shape(
            "assemble_unet_input",
            format!("noisy latent must have {LATENT_CHANNELS} channels, got {c}"),
        ));
    }
    if bundle.masked_latent.shape() != [LATENT_CHANNELS, h, w]
        || bundle.mask_latent.shape() != [1, h, w]
    {
        return Err(Error::shape(
            "assemble_unet_input",
            format!(
                "conditioning {:?}/{:?} does not match noisy latent {h}x{w}",
                bundle.masked_latent.shape(),
                bundle.mask_latent.shape()
            ),
        ));
    }
    Tensor::concat_channels(&[noisy_latent, &bundle.masked_latent, &bundle.mask_latent])
}

fn expect_image_shape<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 3]> {
    match t.shape() {
        [3, h, w] => Ok([3, *h, *w]),
        other => Err(Error::shape(op, format!("expected [3, H, W] image, got {other:?}"))),
    }
}

fn expect_mask_shape<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 2]> {
    match t.shape() {
        [1, h, w] => Ok([*h, *w]),
        other => Err(Error::shape(op, format!("expected [1, H, W] mask, got {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::DEFAULT_CODEC_SEED;
    use proptest::prelude::*;

    fn setup() -> (CodecParams<f32>, TextEmbedder<f32>) {
        (
            CodecParams::from_seed(DEFAULT_CODEC_SEED),
            TextEmbedder::from_seed(DEFAULT_TEXT_SEED),
        )
    }

    #[test]
    fn empty_prompt_is_all_zeros() {
        let (_, emb) = setup();
        let e = emb.embed("");
        assert_eq!(e, Tensor::zeros(&[TEXT_TOKENS, TEXT_DIM]));
        assert_eq!(e, emb.uncond());
    }

    #[test]
    fn embedding_is_deterministic_and_case_insensitive() {
        let (_, emb) = setup();
        assert_eq!(emb.embed("a cat on grass"), emb.embed("a cat on grass"));
        assert_eq!(emb.embed("A CAT"), emb.embed("a cat"));
    }

    #[test]
    fn different_prompts_differ_somewhere() {
        let (_, emb) = setup();
        let cat = emb.embed("a cat");
        let dog = emb.embed("a dog");
        // Token slot 1 holds "cat" vs "dog"; compare slot-wise.
        let differing_slots = (0..TEXT_TOKENS)
            .filter(|&s| {
                cat.data()[s * TEXT_DIM..(s + 1) * TEXT_DIM]
                    != dog.data()[s * TEXT_DIM..(s + 1) * TEXT_DIM]
            })
            .count();
        assert!(differing_slots >= 1);
    }

    #[test]
    fn binarize_threshold_boundary() {
        let m = Tensor::new(vec![1, 1, 4], vec![0.0f32, 0.49, 0.5, 1.0]).unwrap();
        let b = binarize_mask(&m).unwrap();
        assert_eq!(b.data(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn binarize_preserves_trivial_masks() {
        let zeros = Tensor::<f32>::zeros(&[1, 4, 4]);
        assert_eq!(binarize_mask(&zeros).unwrap(), zeros);
        let ones = Tensor::<f32>::full(&[1, 4, 4], 1.0);
        assert_eq!(binarize_mask(&ones).unwrap(), ones);
    }

    proptest! {
        #[test]
        fn binarize_is_idempotent(values in proptest::collection::vec(0.0f32..=1.0, 16)) {
            let m = Tensor::new(vec![1, 4, 4], values).unwrap();
            let once = binarize_mask(&m).unwrap();
            let twice = binarize_mask(&once).unwrap();
            prop_assert_eq!(once, twice);
        }
    }

    #[test]
    fn masked_image_cases() {
        let img = Tensor::<f32>::from_fn(&[3, 2, 2], |i| (i + 1) as f32 / 12.0);
        let all = Tensor::full(&[1, 2, 2], 1.0f32);
        assert_eq!(make_masked_image(&img, &all).unwrap(), Tensor::zeros(&[3, 2, 2]));

        let none = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(make_masked_image(&img, &none).unwrap(), img);

        let mut single = Tensor::zeros(&[1, 2, 2]);
        single.data_mut()[3] = 1.0; // pixel (1, 1)
        let out = make_masked_image(&img, &single).unwrap();
        for c in 0..3 {
            for p in 0..4 {
                let expect = if p == 3 { 0.0 } else { img.data()[c * 4 + p] };
                assert_eq!(out.data()[c * 4 + p], expect);
            }
        }
    }

    #[test]
    fn bundle_shapes_and_black_frame_latent() {
        let (codec, emb) = setup();
        let img = Tensor::<f32>::from_fn(&[3, 64, 64], |i| ((i % 200) as f32) / 255.0);
        let mask = Tensor::full(&[1, 64, 64], 1.0f32);
        let b = build_bundle(&codec, &emb, &img, &mask, "background").unwrap();
        assert_eq!(b.masked_latent.shape(), &[4, 8, 8]);
        assert_eq!(b.mask_latent.shape(), &[1, 8, 8]);
        // Everything masked means the codec sees a black frame.
        assert_eq!(b.masked_latent, Tensor::zeros(&[4, 8, 8]));
        assert_eq!(b.mask_latent, Tensor::full(&[1, 8, 8], 1.0));
    }

    #[test]
    fn block_mask_lands_on_single_latent_cell() {
        let (codec, emb) = setup();
        let img = Tensor::<f32>::full(&[3, 64, 64], 0.5);
        // Mask exactly the top-left 8x8 pixel block.
        let mask = Tensor::from_fn(&[1, 64, 64], |i| {
            let (y, x) = (i / 64, i % 64);
            if y < 8 && x < 8 {
                1.0f32
            } else {
                0.0
            }
        });
        let b = build_bundle(&codec, &emb, &img, &mask, "").unwrap();
        for (i, &v) in b.mask_latent.data().iter().enumerate() {
            let expect = if i == 0 { 1.0 } else { 0.0 };
            assert_eq!(v, expect, "latent mask cell {i}");
        }
    }

    #[test]
    fn assemble_is_plain_concatenation() {
        let (codec, emb) = setup();
        let img = Tensor::<f32>::from_fn(&[3, 64, 64], |i| ((i * 31 % 256) as f32) / 255.0);
        let mask = Tensor::from_fn(&[1, 64, 64], |i| if i % 5 == 0 { 1.0f32 } else { 0.0 });
        let bundle = build_bundle(&codec, &emb, &img, &mask, "a boat").unwrap();
        let noisy = Tensor::<f32>::from_fn(&[4, 8, 8], |i| i as f32 * 0.01);
        let nine = assemble_unet_input(&noisy, &bundle).unwrap();
        assert_eq!(nine.shape(), &[9, 8, 8]);
        assert_eq!(nine.slice_channels(0..4).unwrap(), noisy);
        assert_eq!(nine.slice_channels(4..8).unwrap(), bundle.masked_latent);
        assert_eq!(nine.slice_channels(8..9).unwrap(), bundle.mask_latent);
    }

    #[test]
    fn assemble_rejects_spatial_mismatch() {
        let (codec, emb) = setup();
        let img = Tensor::<f32>::full(&[3, 64, 64], 0.2);
        let mask = Tensor::zeros(&[1, 64, 64]);
        let bundle = build_bundle(&codec, &emb, &img, &mask, "").unwrap();
        let noisy = Tensor::<f32>::zeros(&[4, 16, 16]);
        assert!(assemble_unet_input(&noisy, &bundle).is_err());
    }

    #[test]
    fn masked_region_reencoding_is_stable() {
        // decode(masked_latent) re-encoded equals masked_latent: projection
        // idempotence inherited from the codec.
        let (codec, emb) = setup();
        let img = Tensor::<f32>::from_fn(&[3, 32, 32], |i| ((i * 7 % 100) as f32) / 100.0);
        let mask = Tensor::from_fn(&[1, 32, 32], |i| if i < 256 { 1.0f32 } else { 0.0 });
        let b = build_bundle(&codec, &emb, &img, &mask, "x").unwrap();
        let re = codec.encode(&codec.decode(&b.masked_latent).unwrap()).unwrap();
        assert!(re.max_abs_diff(&b.masked_latent) < 1e-5);
    }
}
