//! Image-quality and temporal-consistency metrics over 8-bit frames.
//!
//! All metrics run on emitted 8-bit images (not float latents) in the
//! 0–255 scale:
//!
//! * [`compute_psnr`] — `20·log10(255/√MSE)`, `+∞` for identical images.
//! * [`compute_ssim`] — single-scale SSIM, 11×11 Gaussian window σ = 1.5,
//!   valid (non-padded) windows only, per-channel then averaged.
//! * [`compute_temporal_consistency`] — mean MSE between consecutive
//!   frames restricted to pixels unmasked in both; quantifies how steady
//!   the unedited background stays across a clip.
//!
//! [`evaluate_sequences`] bundles the three into per-frame rows ready for
//! CSV reporting.

use crate::error::{Error, Result};
use crate::image::Image8;

/// SSIM window edge length.
const SSIM_WINDOW: usize = 11;
/// SSIM window Gaussian sigma.
const SSIM_SIGMA: f64 = 1.5;
/// SSIM luminance stabilizer, `(0.01·255)²`.
const SSIM_C1: f64 = 6.5025;
/// SSIM contrast stabilizer, `(0.03·255)²`.
const SSIM_C2: f64 = 58.5225;

/// Per-frame metric values; `temporal_mse` is `None` for frame 0, which
/// has no predecessor.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub frame_index: usize,
    /// Reference-vs-candidate PSNR in dB; `+∞` when identical.
    pub psnr_db: f64,
    /// Reference-vs-candidate SSIM in `[-1, 1]`.
    pub ssim: f64,
    /// MSE against the previous candidate frame over co-unmasked pixels.
    pub temporal_mse: Option<f64>,
}

/// Temporal-consistency summary for a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConsistency {
    /// Mean of `pair_mse` (pairs without overlap contribute 0).
    pub score: f64,
    /// One MSE per consecutive frame pair `(i-1, i)`, index `i-1`.
    pub pair_mse: Vec<f64>,
    /// Pair indices where the masks left no common unmasked pixel; those
    /// pairs contribute 0 to the score by definition.
    pub pairs_without_overlap: Vec<usize>,
}

fn check_same_shape(a: &Image8, b: &Image8, op: &'static str) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.channels != b.channels {
        return Err(Error::shape(
            op,
            format!(
                "images differ: {}x{}x{} vs {}x{}x{}",
                a.width, a.height, a.channels, b.width, b.height, b.channels
            ),
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels and pixels, 0–255
/// scale. Identical images give `+∞`.
pub fn compute_psnr(a: &Image8, b: &Image8) -> Result<f64> {
    check_same_shape(a, b, "compute_psnr")?;
    let n = a.data.len() as f64;
    let sum_sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    if sum_sq == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sum_sq / n;
    Ok(20.0 * (255.0 / mse.sqrt()).log10())
}

/// Normalized 11×11 Gaussian window, row-major.
fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w: Vec<f64> = (0..SSIM_WINDOW * SSIM_WINDOW)
        .map(|i| {
            let (y, x) = ((i / SSIM_WINDOW) as f64, (i % SSIM_WINDOW) as f64);
            (-((y - c).powi(2) + (x - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let sum: f64 = w.iter().sum();
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM with the valid-window convention: windows never cross
/// the image border, so every output value uses real pixels only. Channel
/// results are averaged. Requires both dimensions ≥ 11.
pub fn compute_ssim(a: &Image8, b: &Image8) -> Result<f64> {
    check_same_shape(a, b, "compute_ssim")?;
    let (w, h, c) = (a.width, a.height, a.channels);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::parameter(
            "compute_ssim",
            format!("image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"),
        ));
    }

    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        for y0 in 0..=(h - SSIM_WINDOW) {
            for x0 in 0..=(w - SSIM_WINDOW) {
                let (mut ma, mut mb) = (0.0f64, 0.0f64);
                let (mut saa, mut sbb, mut sab) = (0.0f64, 0.0f64, 0.0f64);
                for dy in 0..SSIM_WINDOW {
                    for dx in 0..SSIM_WINDOW {
                        let g = win[dy * SSIM_WINDOW + dx];
                        let idx = ((y0 + dy) * w + x0 + dx) * c + ch;
                        let (pa, pb) = (a.data[idx] as f64, b.data[idx] as f64);
                        ma += g * pa;
                        mb += g * pb;
                        saa += g * (pa * pa);
                        sbb += g * (pb * pb);
                        // Grouping the pixel product first keeps the metric
                        // exactly symmetric in its arguments.
                        sab += g * (pa * pb);
                    }
                }
                let (va, vb) = (saa - ma * ma, sbb - mb * mb);
                let cov = sab - ma * mb;
                let ssim = ((2.0 * (ma * mb) + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                total += ssim;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// MSE between two frames over pixels unmasked in both masks, or `None`
/// when no pixel qualifies.
fn pair_mse_unmasked(
    prev: &Image8,
    curr: &Image8,
    prev_mask: &Image8,
    curr_mask: &Image8,
) -> Option<f64> {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for y in 0..curr.height {
        for x in 0..curr.width {
            if prev_mask.mask_bit(x, y) || curr_mask.mask_bit(x, y) {
                continue;
            }
            for (pa, pb) in prev.pixel(x, y).iter().zip(curr.pixel(x, y)) {
                let d = *pa as f64 - *pb as f64;
                sum += d * d;
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Temporal consistency of a clip: for each consecutive frame pair, the
/// MSE over pixels unmasked in both frames; the score is the mean over
/// pairs. Pairs whose masks leave no common pixel contribute 0 and are
/// listed in `pairs_without_overlap`.
pub fn compute_temporal_consistency(
    frames: &[Image8],
    masks: &[Image8],
) -> Result<TemporalConsistency> {
    if frames.len() < 2 {
        return Err(Error::parameter(
            "compute_temporal_consistency",
            format!("need at least 2 frames, got {}", frames.len()),
        ));
    }
    if frames.len() != masks.len() {
        return Err(Error::parameter(
            "compute_temporal_consistency",
            format!("{} frames but {} masks", frames.len(), masks.len()),
        ));
    }
    for (f, m) in frames.iter().zip(masks) {
        check_same_shape(f, frames.first().expect("nonempty"), "compute_temporal_consistency")?;
        if m.width != f.width || m.height != f.height {
            return Err(Error::shape(
                "compute_temporal_consistency",
                format!(
                    "mask {}x{} does not match frame {}x{}",
                    m.width, m.height, f.width, f.height
                ),
            ));
        }
    }

    let mut pair_mse = Vec::with_capacity(frames.len() - 1);
    let mut pairs_without_overlap = Vec::new();
    for i in 1..frames.len() {
        match pair_mse_unmasked(&frames[i - 1], &frames[i], &masks[i - 1], &masks[i]) {
            Some(mse) => pair_mse.push(mse),
            None => {
                pairs_without_overlap.push(i - 1);
                pair_mse.push(0.0);
            }
        }
    }
    let score = pair_mse.iter().sum::<f64>() / pair_mse.len() as f64;
    Ok(TemporalConsistency { score, pair_mse, pairs_without_overlap })
}

/// Builds per-frame report rows: PSNR/SSIM of each candidate frame against
/// its reference, plus the temporal MSE of consecutive candidate frames
/// over co-unmasked pixels (`None` for frame 0; also `None` for a pair
/// with no unmasked overlap).
pub fn evaluate_sequences(
    reference: &[Image8],
    candidate: &[Image8],
    masks: &[Image8],
) -> Result<Vec<MetricRow>> {
    if reference.len() != candidate.len() || reference.len() != masks.len() {
        return Err(Error::parameter(
            "evaluate_sequences",
            format!(
                "sequence lengths differ: {} reference, {} candidate, {} masks",
                reference.len(),
                candidate.len(),
                masks.len()
            ),
        ));
    }
    if reference.is_empty() {
        return Err(Error::parameter("evaluate_sequences", "empty sequences"));
    }

    let mut rows = Vec::with_capacity(reference.len());
    for i in 0..reference.len() {
        let temporal_mse = if i == 0 {
            None
        } else {
            pair_mse_unmasked(&candidate[i - 1], &candidate[i], &masks[i - 1], &masks[i])
        };
        rows.push(MetricRow {
            frame_index: i,
            psnr_db: compute_psnr(&reference[i], &candidate[i])?,
            ssim: compute_ssim(&reference[i], &candidate[i])?,
            temporal_mse,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn constant(value: u8) -> Image8 {
        Image8::filled(16, 16, 3, value)
    }

    fn random_image(seed: u64, w: usize, h: usize) -> Image8 {
        let mut r = rng::seeded(seed);
        let data = (0..w * h * 3).map(|_| r.gen()).collect();
        Image8::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = random_image(1, 16, 16);
        assert_eq!(compute_psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_uniform_error_of_ten() {
        let a = constant(100);
        let b = constant(110);
        let got = compute_psnr(&a, &b).unwrap();
        let expected = 20.0 * (255.0f64 / 10.0).log10();
        assert!((expected - 28.1308).abs() < 1e-4, "oracle sanity");
        assert!((got - expected).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn psnr_maximal_error_is_zero_db() {
        let a = constant(0);
        let b = constant(255);
        assert!(compute_psnr(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_rejects_shape_mismatch() {
        let a = constant(0);
        let b = Image8::filled(16, 8, 3, 0);
        assert!(compute_psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = random_image(2, 20, 20);
        assert!((compute_ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let c = constant(100);
        assert!((compute_ssim(&c, &c).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constant_shift_matches_luminance_term() {
        // Zero variance collapses SSIM to the stabilized luminance ratio
        // (2·μa·μb + C1)/(μa² + μb² + C1); recomputed here by hand.
        let got = compute_ssim(&constant(100), &constant(110)).unwrap();
        let expected = (2.0 * 100.0 * 110.0 + SSIM_C1) / (100.0f64.powi(2) + 110.0f64.powi(2) + SSIM_C1);
        assert!((got - expected).abs() < 1e-9, "got {got}, expected {expected}");
        assert!((expected - 0.9945).abs() < 1e-3, "published approximation holds");
    }

    #[test]
    fn ssim_rejects_subwindow_images() {
        let a = Image8::filled(10, 16, 3, 0);
        let err = compute_ssim(&a, &a).unwrap_err();
        assert!(err.to_string().contains("window"), "{err}");
    }

    #[test]
    fn temporal_identical_frames_score_zero() {
        let f = random_image(3, 16, 16);
        let frames = vec![f.clone(), f.clone(), f];
        let masks = vec![Image8::filled(16, 16, 1, 0); 3];
        let t = compute_temporal_consistency(&frames, &masks).unwrap();
        assert_eq!(t.score, 0.0);
        assert_eq!(t.pair_mse, vec![0.0, 0.0]);
        assert!(t.pairs_without_overlap.is_empty());
    }

    #[test]
    fn temporal_uniform_difference_is_its_square() {
        let frames = vec![constant(100), constant(110)];
        let masks = vec![Image8::filled(16, 16, 1, 0); 2];
        let t = compute_temporal_consistency(&frames, &masks).unwrap();
        assert!((t.score - 100.0).abs() < 1e-12);
    }

    #[test]
    fn temporal_full_masks_flag_every_pair() {
        let frames = vec![constant(0), constant(255), constant(7)];
        let masks = vec![Image8::filled(16, 16, 1, 255); 3];
        let t = compute_temporal_consistency(&frames, &masks).unwrap();
        assert_eq!(t.score, 0.0);
        assert_eq!(t.pairs_without_overlap, vec![0, 1]);
    }

    #[test]
    fn temporal_respects_mask_union_per_pair() {
        // Two 16x16 frames identical except one pixel; masking that pixel
        // in EITHER frame of the pair removes its contribution.
        let a = constant(50);
        let mut b = constant(50);
        b.pixel_mut(3, 4).copy_from_slice(&[60, 60, 60]);

        let empty = Image8::filled(16, 16, 1, 0);
        let mut hit = empty.clone();
        hit.pixel_mut(3, 4)[0] = 255;

        let diff = compute_temporal_consistency(
            &[a.clone(), b.clone()],
            &[empty.clone(), empty.clone()],
        )
        .unwrap();
        assert!(diff.score > 0.0);

        for masks in [
            [hit.clone(), empty.clone()],
            [empty.clone(), hit.clone()],
            [hit.clone(), hit.clone()],
        ] {
            let t = compute_temporal_consistency(&[a.clone(), b.clone()], &masks).unwrap();
            assert_eq!(t.score, 0.0, "masked pixel still counted");
        }
    }

    #[test]
    fn temporal_validates_counts() {
        let frames = vec![constant(0)];
        let masks = vec![Image8::filled(16, 16, 1, 0)];
        assert!(compute_temporal_consistency(&frames, &masks).is_err());

        let frames = vec![constant(0), constant(0)];
        assert!(compute_temporal_consistency(&frames, &masks).is_err());
    }

    #[test]
    fn evaluate_sequences_builds_rows() {
        let reference = vec![constant(100), constant(100)];
        let candidate = vec![constant(100), constant(110)];
        let masks = vec![Image8::filled(16, 16, 1, 0); 2];
        let rows = evaluate_sequences(&reference, &candidate, &masks).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].frame_index, 0);
        assert_eq!(rows[0].psnr_db, f64::INFINITY);
        assert_eq!(rows[0].temporal_mse, None);
        assert!((rows[1].temporal_mse.unwrap() - 100.0).abs() < 1e-12);
        assert!(rows[1].psnr_db < rows[0].psnr_db);
    }

    proptest! {
        #[test]
        fn psnr_and_ssim_are_symmetric(seed in 0u64..100) {
            let a = random_image(seed, 16, 16);
            let b = random_image(seed.wrapping_add(1000), 16, 16);
            prop_assert_eq!(
                compute_psnr(&a, &b).unwrap(),
                compute_psnr(&b, &a).unwrap()
            );
            prop_assert_eq!(
                compute_ssim(&a, &b).unwrap(),
                compute_ssim(&b, &a).unwrap()
            );
        }

        #[test]
        fn ssim_never_exceeds_one(seed in 0u64..100) {
            let a = random_image(seed, 16, 16);
            let b = random_image(seed.wrapping_add(2000), 16, 16);
            prop_assert!(compute_ssim(&a, &b).unwrap() <= 1.0 + 1e-12);
        }

        #[test]
        fn psnr_decreases_with_uniform_error(base in 0u8..100) {
            let a = Image8::filled(16, 16, 3, base);
            let mut last = f64::INFINITY;
            for delta in [5u8, 10, 20, 40] {
                let b = Image8::filled(16, 16, 3, base + delta);
                let p = compute_psnr(&a, &b).unwrap();
                prop_assert!(p < last);
                last = p;
            }
        }
    }
}
