//! The end-to-end editing procedure: preprocess, invert to the final noise
//! level, then denoise with per-step random frame batching, cross-frame
//! extended attention and classifier-free guidance.
//!
//! One edit runs as follows. Every frame gets a conditioning bundle (masked
//! image latent, mask latent, prompt embedding) and its clean latent is
//! inverted to the last inference timestep while keeping only one latent
//! per frame. Then, walking the inference timesteps from noisiest to
//! cleanest, the frames are partitioned into random batches (a fresh
//! seeded partition per step, covering every frame exactly once), each
//! batch runs through the denoiser twice — once with the unconditional
//! embedding, once with the prompt — the two noise estimates are blended
//! by [`cfg_combine`], and each frame takes one DDIM step. Final latents
//! are decoded, optionally composited over the originals outside the mask,
//! and quantized back to 8-bit frames.
//!
//! Switching [`EditMode::FrameByFrame`] disables the cross-frame coupling
//! (the ablation baseline); everything else stays identical. Batches
//! within a step run in parallel, and because each batch only reads the
//! immutable model plus its own frames' state, the result is bit-identical
//! to serial execution.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::codec::CodecParams;
use crate::conditioning::{
    assemble_unet_input, binarize_mask, build_bundle, ConditioningBundle, TextEmbedder,
};
use crate::denoiser::{AttentionMode, NoisePredictor};
use crate::error::{Error, Result};
use crate::image::{FrameSequence, Image8, MaskSequence};
use crate::metrics::{evaluate_sequences, MetricRow};
use crate::rng;
use crate::scalar::Scalar;
use crate::schedule::{NoiseSchedule, DEFAULT_INFERENCE_STEPS};
use crate::tensor::Tensor;

/// Default classifier-free guidance scale.
pub const DEFAULT_GUIDANCE_SCALE: f32 = 7.5;
/// Default frames per denoising batch.
pub const DEFAULT_BATCH_SIZE: usize = 5;

/// Whether frames are denoised with cross-frame extended attention or
/// independently (the ablation baseline).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    EAttn,
    FrameByFrame,
}

impl EditMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EditMode::EAttn => "eattn",
            EditMode::FrameByFrame => "frame_by_frame",
        }
    }
}

impl std::str::FromStr for EditMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eattn" => Ok(EditMode::EAttn),
            "frame_by_frame" => Ok(EditMode::FrameByFrame),
            other => Err(Error::Config(format!(
                "unknown mode \"{other}\" (expected \"eattn\" or \"frame_by_frame\")"
            ))),
        }
    }
}

impl std::fmt::Display for EditMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Editing task. Presets only choose prompt defaults — the pipeline is
/// identical for all three; retargeting differs solely in what the caller
/// puts in the mask sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskPreset {
    Removal,
    Replacement,
    Retargeting,
}

impl TaskPreset {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskPreset::Removal => "removal",
            TaskPreset::Replacement => "replacement",
            TaskPreset::Retargeting => "retargeting",
        }
    }
}

impl std::str::FromStr for TaskPreset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "removal" => Ok(TaskPreset::Removal),
            "replacement" => Ok(TaskPreset::Replacement),
            "retargeting" => Ok(TaskPreset::Retargeting),
            other => Err(Error::Config(format!(
                "unknown task \"{other}\" (expected \"removal\", \"replacement\" or \"retargeting\")"
            ))),
        }
    }
}

impl std::fmt::Display for TaskPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything one edit needs. Frames are RGB with equal dimensions
/// divisible by 8; masks align with frames one-to-one and may differ in
/// shape and position per frame.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub frames: FrameSequence,
    pub masks: MaskSequence,
    pub prompt: String,
    pub guidance_scale: f32,
    pub seed: u64,
    pub num_steps: usize,
    pub batch_size: usize,
    pub mode: EditMode,
    pub composite_unmasked: bool,
    pub task: TaskPreset,
}

impl EditRequest {
    /// A request with the documented defaults: empty prompt, guidance 7.5,
    /// seed 0, 50 steps, batch size 5, extended attention, no compositing,
    /// removal task.
    pub fn new(frames: FrameSequence, masks: MaskSequence) -> Self {
        EditRequest {
            frames,
            masks,
            prompt: String::new(),
            guidance_scale: DEFAULT_GUIDANCE_SCALE,
            seed: 0,
            num_steps: DEFAULT_INFERENCE_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            mode: EditMode::EAttn,
            composite_unmasked: false,
            task: TaskPreset::Removal,
        }
    }
}

/// Reproducibility record for one edit. Everything except `wall_ms` is a
/// pure function of the request, so two runs of the same request agree on
/// all other fields.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub seed: u64,
    pub guidance_scale: f32,
    pub mode: EditMode,
    pub task: TaskPreset,
    /// Prompt after task-preset resolution.
    pub prompt: String,
    pub num_steps: usize,
    pub batch_size: usize,
    pub frame_count: usize,
    /// Fingerprint of the noise schedule used.
    pub schedule_hash: u64,
    /// Wall-clock duration; informational only, excluded from any
    /// determinism guarantees.
    pub wall_ms: u128,
}

/// Output of [`run_edit`].
#[derive(Debug, Clone)]
pub struct EditResult {
    /// Same count and dimensions as the input frames.
    pub edited_frames: FrameSequence,
    /// Input-vs-output quality rows; `None` when frames are smaller than
    /// the SSIM window (11×11).
    pub per_frame_metrics: Option<Vec<MetricRow>>,
    pub run_manifest: RunManifest,
}

/// Splits `0..n_frames` into a seeded random partition of batches of at
/// most `batch_size`, deterministic per `(seed, step)`. Every frame
/// appears exactly once, so one call covers a whole denoising step.
pub fn plan_batches(
    n_frames: usize,
    batch_size: usize,
    step: u64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if n_frames == 0 {
        return Err(Error::parameter("plan_batches", "n_frames must be >= 1"));
    }
    if batch_size == 0 {
        return Err(Error::parameter("plan_batches", "batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..n_frames).collect();
    // Fisher–Yates on a stream keyed by (seed, step): the plan depends
    // only on those two values, never on execution timing.
    let mut r = rng::seeded_stream(seed, step);
    for i in (1..n_frames).rev() {
        let j = r.gen_range(0..=i);
        order.swap(i, j);
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Classifier-free guidance blend `eps_u + gs·(eps_c − eps_u)`.
///
/// `gs = 0` returns the unconditional estimate exactly and `gs = 1` the
/// conditional one exactly (the formula collapses algebraically; returning
/// the operand avoids float round-trips on those anchor values).
pub fn cfg_combine<T: Scalar>(
    eps_uncond: &Tensor<T>,
    eps_cond: &Tensor<T>,
    gs: T,
) -> Result<Tensor<T>> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::shape(
            "cfg_combine",
            format!(
                "shapes {:?} and {:?} differ",
                eps_uncond.shape(),
                eps_cond.shape()
            ),
        ));
    }
    if gs == T::zero() {
        return Ok(eps_uncond.clone());
    }
    if gs == T::one() {
        return Ok(eps_cond.clone());
    }
    eps_uncond.add_scaled(&eps_cond.sub(eps_uncond)?, gs)
}

/// Fills in what the task leaves unspecified: removal and retargeting
/// default an empty prompt to "background"; replacement requires one.
/// Nothing else changes — presets configure, they never alter the
/// algorithm.
pub fn apply_task_preset(task: TaskPreset, mut request: EditRequest) -> Result<EditRequest> {
    let empty = request.prompt.trim().is_empty();
    match task {
        TaskPreset::Removal | TaskPreset::Retargeting => {
            if empty {
                request.prompt = "background".to_string();
            }
        }
        TaskPreset::Replacement => {
            if empty {
                return Err(Error::Config(
                    "replacement task requires a non-empty prompt".to_string(),
                ));
            }
        }
    }
    request.task = task;
    Ok(request)
}

/// Rejects inconsistent requests before any pipeline work: count or size
/// mismatches, dimensions the model cannot process, out-of-range guidance,
/// and a schedule that disagrees with `num_steps`.
pub fn validate_request(request: &EditRequest, schedule: &NoiseSchedule<impl Scalar>) -> Result<()> {
    let frames = &request.frames;
    if frames.is_empty() {
        return Err(Error::Config("no input frames".to_string()));
    }
    if request.masks.len() != frames.len() {
        return Err(Error::Config(format!(
            "mask count {} != frame count {}",
            request.masks.len(),
            frames.len()
        )));
    }
    let (w, h) = (frames[0].width, frames[0].height);
    for (i, f) in frames.iter().enumerate() {
        if f.channels != 3 {
            return Err(Error::Config(format!("frame {i} is not RGB")));
        }
        if f.width != w || f.height != h {
            return Err(Error::Config(format!(
                "frame {i} is {}x{}, expected {w}x{h}",
                f.width, f.height
            )));
        }
    }
    // 8x for the codec, then two 2x denoiser levels on the latent.
    if w % 32 != 0 || h % 32 != 0 || w == 0 || h == 0 {
        return Err(Error::Config(format!(
            "frame dimensions {w}x{h} must be nonzero multiples of 32 \
             (8x latent downscale plus two 2x denoiser levels)"
        )));
    }
    for (i, m) in request.masks.iter().enumerate() {
        if m.width != w || m.height != h {
            return Err(Error::Config(format!(
                "mask {i} is {}x{}, expected {w}x{h}",
                m.width, m.height
            )));
        }
    }
    if !request.guidance_scale.is_finite() || request.guidance_scale < 0.0 {
        return Err(Error::Config(format!(
            "guidance_scale must be finite and >= 0, got {}",
            request.guidance_scale
        )));
    }
    if request.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".to_string()));
    }
    if request.num_steps != schedule.num_inference_steps() {
        return Err(Error::Config(format!(
            "request wants {} steps but the schedule provides {}",
            request.num_steps,
            schedule.num_inference_steps()
        )));
    }
    Ok(())
}

/// Tags an error with the pipeline stage it came from.
fn at_stage<X>(result: Result<X>, stage: &str) -> Result<X> {
    result.map_err(|e| Error::parameter("run_edit", format!("{stage}: {e}")))
}

/// Keeps edited values inside the mask and original values outside it.
fn overlay_unmasked<T: Scalar>(
    edited: &Tensor<T>,
    original: &Tensor<T>,
    binary_mask: &Tensor<T>,
) -> Result<Tensor<T>> {
    if edited.shape() != original.shape() {
        return Err(Error::shape(
            "overlay_unmasked",
            format!("{:?} vs {:?}", edited.shape(), original.shape()),
        ));
    }
    let (h, w) = (edited.shape()[1], edited.shape()[2]);
    if binary_mask.shape() != [1, h, w] {
        return Err(Error::shape(
            "overlay_unmasked",
            format!("mask {:?} does not cover {h}x{w}", binary_mask.shape()),
        ));
    }
    let half = T::from_f64_lossy(0.5);
    Ok(Tensor::from_fn(edited.shape(), |idx| {
        let p = idx % (h * w);
        if binary_mask.data()[p] > half {
            edited.data()[idx]
        } else {
            original.data()[idx]
        }
    }))
}

/// Runs one full edit. See the module docs for the procedure; `model` is
/// any noise predictor (the production path passes the fixed-weight
/// denoiser), and `schedule` must agree with `request.num_steps`.
pub fn run_edit<T, M>(
    request: &EditRequest,
    model: &M,
    codec: &CodecParams<T>,
    embedder: &TextEmbedder<T>,
    schedule: &NoiseSchedule<T>,
) -> Result<EditResult>
where
    T: Scalar,
    M: NoisePredictor<T> + Sync,
{
    let started = Instant::now();
    let request = apply_task_preset(request.task, request.clone())?;
    validate_request(&request, schedule)?;
    let n = request.frames.len();

    // Stage 1: float views, conditioning bundles and clean latents.
    let image_tensors: Vec<Tensor<T>> =
        request.frames.iter().map(Image8::to_tensor).collect();
    let mask_tensors: Vec<Tensor<T>> = request.masks.iter().map(Image8::to_tensor).collect();
    let bundles: Vec<ConditioningBundle<T>> = at_stage(
        image_tensors
            .iter()
            .zip(&mask_tensors)
            .map(|(img, mask)| build_bundle(codec, embedder, img, mask, &request.prompt))
            .collect(),
        "conditioning",
    )?;
    let latents: Vec<Tensor<T>> = at_stage(
        image_tensors.iter().map(|img| codec.encode(img)).collect(),
        "encode",
    )?;

    // Stage 2: inversion to the last inference timestep.
    let mut state = at_stage(
        schedule.invert_to_final(&latents, &bundles, model),
        "inversion",
    )?;

    // Stage 3: guided denoising, noisiest timestep first.
    let text = embedder.embed(&request.prompt);
    let uncond = embedder.uncond();
    let gs = T::from_f64_lossy(request.guidance_scale as f64);
    let mode = match request.mode {
        EditMode::EAttn => AttentionMode::ExtendedAcrossBatch,
        EditMode::FrameByFrame => AttentionMode::SelfPerFrame,
    };
    let ts = schedule.inference_timesteps();
    for (step, idx) in (0..ts.len()).rev().enumerate() {
        let t = ts[idx];
        let t_prev = if idx == 0 { None } else { Some(ts[idx - 1]) };
        let batches = plan_batches(n, request.batch_size, step as u64, request.seed)?;

        // Batches only read shared immutable state and write disjoint
        // frame indices, so parallel order cannot affect the result.
        let updates: Vec<Vec<(usize, Tensor<T>)>> = at_stage(
            batches
                .par_iter()
                .map(|batch| {
                    let inputs: Vec<Tensor<T>> = batch
                        .iter()
                        .map(|&f| assemble_unet_input(&state[f], &bundles[f]))
                        .collect::<Result<_>>()?;
                    let eps_u = model.predict(&inputs, t, &uncond, mode)?;
                    let eps_c = model.predict(&inputs, t, &text, mode)?;
                    batch
                        .iter()
                        .enumerate()
                        .map(|(k, &f)| {
                            let eps = cfg_combine(&eps_u[k], &eps_c[k], gs)?;
                            Ok((f, schedule.ddim_step(&state[f], &eps, t, t_prev)?))
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect(),
            &format!("denoise step {step} (t={t})"),
        )?;
        for (f, x) in updates.into_iter().flatten() {
            state[f] = x;
        }
    }

    // Stage 4: decode, composite, quantize.
    let edited_frames: FrameSequence = at_stage(
        state
            .iter()
            .enumerate()
            .map(|(f, latent)| {
                let mut decoded = codec.decode(latent)?;
                if request.composite_unmasked {
                    let binary = binarize_mask(&mask_tensors[f])?;
                    decoded = overlay_unmasked(&decoded, &image_tensors[f], &binary)?;
                }
                Image8::from_tensor(&decoded)
            })
            .collect(),
        "decode",
    )?;

    // Stage 5: quality report (needs room for the SSIM window).
    let per_frame_metrics = if request.frames[0].width >= 11 && request.frames[0].height >= 11 {
        Some(at_stage(
            evaluate_sequences(&request.frames, &edited_frames, &request.masks),
            "metrics",
        )?)
    } else {
        None
    };

    Ok(EditResult {
        edited_frames,
        per_frame_metrics,
        run_manifest: RunManifest {
            seed: request.seed,
            guidance_scale: request.guidance_scale,
            mode: request.mode,
            task: request.task,
            prompt: request.prompt,
            num_steps: request.num_steps,
            batch_size: request.batch_size,
            frame_count: n,
            schedule_hash: schedule.content_hash(),
            wall_ms: started.elapsed().as_millis(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::DEFAULT_CODEC_SEED;
    use crate::conditioning::DEFAULT_TEXT_SEED;
    use crate::denoiser::{DenoiserModel, DEFAULT_WEIGHT_SEED};
    use proptest::prelude::*;

    fn test_frames(n: usize, size: usize) -> (FrameSequence, MaskSequence) {
        let frames = (0..n)
            .map(|i| {
                let mut img = Image8::filled(size, size, 3, 0);
                for y in 0..size {
                    for x in 0..size {
                        let v = ((x * 7 + y * 13 + i * 29) % 256) as u8;
                        img.pixel_mut(x, y).copy_from_slice(&[v, v / 2, 255 - v]);
                    }
                }
                img
            })
            .collect();
        let masks = (0..n)
            .map(|_| {
                let mut m = Image8::filled(size, size, 1, 0);
                for y in size / 4..size / 2 {
                    for x in size / 4..size / 2 {
                        m.pixel_mut(x, y)[0] = 255;
                    }
                }
                m
            })
            .collect();
        (frames, masks)
    }

    fn small_request(n: usize, steps: usize) -> EditRequest {
        let (frames, masks) = test_frames(n, 32);
        let mut r = EditRequest::new(frames, masks);
        r.num_steps = steps;
        r.batch_size = 2;
        r
    }

    fn fixtures(
        steps: usize,
    ) -> (DenoiserModel, CodecParams<f32>, TextEmbedder<f32>, NoiseSchedule<f32>) {
        (
            DenoiserModel::from_seed(DEFAULT_WEIGHT_SEED),
            CodecParams::from_seed(DEFAULT_CODEC_SEED),
            TextEmbedder::from_seed(DEFAULT_TEXT_SEED),
            NoiseSchedule::new(1000, steps).unwrap(),
        )
    }

    #[test]
    fn plan_batches_partitions_every_frame() {
        let batches = plan_batches(10, 4, 3, 17).unwrap();
        let mut sizes: Vec<usize> = batches.iter().map(Vec::len).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 4, 4]);

        let mut seen: Vec<usize> = batches.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn plan_batches_single_batch_when_capacity_suffices() {
        let batches = plan_batches(4, 9, 0, 5).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].len(), 4);
    }

    #[test]
    fn plan_batches_is_keyed_by_seed_and_step() {
        assert_eq!(
            plan_batches(12, 5, 7, 99).unwrap(),
            plan_batches(12, 5, 7, 99).unwrap()
        );
        let base = plan_batches(12, 5, 0, 99).unwrap();
        let differs = (1..6u64).any(|s| plan_batches(12, 5, s, 99).unwrap() != base);
        assert!(differs, "steps 1..6 all produced the step-0 partition");
        let differs = (100..106u64).any(|s| plan_batches(12, 5, 0, s).unwrap() != base);
        assert!(differs, "seeds 100..106 all produced the seed-99 partition");
    }

    #[test]
    fn plan_batches_rejects_zero_arguments() {
        assert!(plan_batches(0, 1, 0, 0).is_err());
        assert!(plan_batches(1, 0, 0, 0).is_err());
    }

    #[test]
    fn cfg_anchor_values_are_exact() {
        let u = Tensor::from_fn(&[4], |i| 0.1 + i as f32);
        let c = Tensor::from_fn(&[4], |i| -0.3 + 2.0 * i as f32);
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&cfg_combine(&u, &c, 1.0).unwrap()), bits(&c));
        assert_eq!(bits(&cfg_combine(&u, &c, 0.0).unwrap()), bits(&u));
    }

    #[test]
    fn cfg_published_example() {
        let u = Tensor::new(vec![1], vec![0.2f32]).unwrap();
        let c = Tensor::new(vec![1], vec![0.4f32]).unwrap();
        let out = cfg_combine(&u, &c, 7.5).unwrap();
        assert!((out.data()[0] - 1.7).abs() < 1e-7, "got {}", out.data()[0]);
    }

    #[test]
    fn cfg_rejects_shape_mismatch() {
        let u = Tensor::<f32>::zeros(&[2]);
        let c = Tensor::<f32>::zeros(&[3]);
        assert!(cfg_combine(&u, &c, 0.0).is_err(), "shortcut must still validate");
        assert!(cfg_combine(&u, &c, 2.0).is_err());
    }

    #[test]
    fn task_presets_fill_prompts() {
        let (frames, masks) = test_frames(1, 16);
        let base = EditRequest::new(frames, masks);

        let r = apply_task_preset(TaskPreset::Removal, base.clone()).unwrap();
        assert_eq!(r.prompt, "background");
        let r = apply_task_preset(TaskPreset::Retargeting, base.clone()).unwrap();
        assert_eq!(r.prompt, "background");

        let err = apply_task_preset(TaskPreset::Replacement, base.clone()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");

        let mut with_prompt = base;
        with_prompt.prompt = "a red balloon".to_string();
        let r = apply_task_preset(TaskPreset::Replacement, with_prompt.clone()).unwrap();
        assert_eq!(r.prompt, "a red balloon");
        let r = apply_task_preset(TaskPreset::Removal, with_prompt).unwrap();
        assert_eq!(r.prompt, "a red balloon", "explicit prompt wins over preset");
    }

    #[test]
    fn retargeting_matches_removal_configuration() {
        let (frames, masks) = test_frames(2, 16);
        let a = apply_task_preset(TaskPreset::Removal, EditRequest::new(frames.clone(), masks.clone()))
            .unwrap();
        let b = apply_task_preset(TaskPreset::Retargeting, EditRequest::new(frames, masks)).unwrap();
        assert_eq!(a.prompt, b.prompt);
        assert_eq!(a.guidance_scale, b.guidance_scale);
        assert_eq!(a.num_steps, b.num_steps);
        assert_eq!(a.batch_size, b.batch_size);
        assert_eq!(a.mode, b.mode);
    }

    #[test]
    fn run_edit_preserves_shape_and_is_deterministic() {
        let (model, codec, embedder, schedule) = fixtures(4);
        let request = small_request(3, 4);
        let a = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();
        let b = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();

        assert_eq!(a.edited_frames.len(), 3);
        for (e, i) in a.edited_frames.iter().zip(&request.frames) {
            assert_eq!((e.width, e.height, e.channels), (i.width, i.height, i.channels));
        }
        for (x, y) in a.edited_frames.iter().zip(&b.edited_frames) {
            assert_eq!(x.data, y.data, "repeat run must be bit-identical");
        }
        let rows = a.per_frame_metrics.as_ref().expect("32x32 fits the SSIM window");
        assert_eq!(rows.len(), 3);

        assert_eq!(a.run_manifest.prompt, "background", "removal preset applied");
        let (mut ma, mut mb) = (a.run_manifest.clone(), b.run_manifest.clone());
        ma.wall_ms = 0;
        mb.wall_ms = 0;
        assert_eq!(ma, mb);
    }

    #[test]
    fn composite_keeps_unmasked_pixels_bit_equal() {
        let (model, codec, embedder, schedule) = fixtures(3);
        let mut request = small_request(2, 3);
        request.composite_unmasked = true;
        let result = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();

        let mut masked_changed = 0usize;
        for (f, (edited, original)) in
            result.edited_frames.iter().zip(&request.frames).enumerate()
        {
            let mask = &request.masks[f];
            for y in 0..original.height {
                for x in 0..original.width {
                    if mask.mask_bit(x, y) {
                        if edited.pixel(x, y) != original.pixel(x, y) {
                            masked_changed += 1;
                        }
                    } else {
                        assert_eq!(
                            edited.pixel(x, y),
                            original.pixel(x, y),
                            "unmasked pixel ({x},{y}) of frame {f} changed"
                        );
                    }
                }
            }
        }
        assert!(masked_changed > 0, "edit did nothing inside the mask");
    }

    #[test]
    fn eattn_with_batch_size_one_equals_frame_by_frame() {
        let (model, codec, embedder, schedule) = fixtures(3);
        let mut request = small_request(2, 3);
        request.batch_size = 1;
        request.mode = EditMode::EAttn;
        let a = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();
        request.mode = EditMode::FrameByFrame;
        request.batch_size = 2;
        let b = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();
        for (x, y) in a.edited_frames.iter().zip(&b.edited_frames) {
            assert_eq!(x.data, y.data);
        }
    }

    #[test]
    fn frame_by_frame_output_is_independent_of_companions() {
        let (model, codec, embedder, schedule) = fixtures(3);
        let mut request = small_request(3, 3);
        request.mode = EditMode::FrameByFrame;
        let together = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();

        let mut solo = request.clone();
        solo.frames = vec![request.frames[0].clone()];
        solo.masks = vec![request.masks[0].clone()];
        let alone = run_edit(&solo, &model, &codec, &embedder, &schedule).unwrap();
        assert_eq!(together.edited_frames[0].data, alone.edited_frames[0].data);
    }

    #[test]
    fn identical_frames_stay_identical_under_eattn() {
        let (model, codec, embedder, schedule) = fixtures(3);
        let (frames, masks) = test_frames(1, 32);
        let mut request = EditRequest::new(
            vec![frames[0].clone(); 4],
            vec![masks[0].clone(); 4],
        );
        request.num_steps = 3;
        request.batch_size = 3;
        request.seed = 11;
        let result = run_edit(&request, &model, &codec, &embedder, &schedule).unwrap();
        let first = &result.edited_frames[0];
        for (i, f) in result.edited_frames.iter().enumerate().skip(1) {
            let max_dev = f
                .data
                .iter()
                .zip(&first.data)
                .map(|(&a, &b)| (a as i16 - b as i16).unsigned_abs())
                .max()
                .unwrap();
            assert!(max_dev <= 1, "frame {i} deviates by {max_dev} levels");
        }
    }

    #[test]
    fn invalid_requests_are_rejected_up_front() {
        let (model, codec, embedder, schedule) = fixtures(3);

        let mut r = small_request(2, 3);
        r.masks.pop();
        let err = run_edit(&r, &model, &codec, &embedder, &schedule).unwrap_err();
        assert!(err.to_string().contains("mask count 1 != frame count 2"), "{err}");

        let mut r = small_request(2, 3);
        r.guidance_scale = -1.0;
        assert!(matches!(
            run_edit(&r, &model, &codec, &embedder, &schedule).unwrap_err(),
            Error::Config(_)
        ));

        let mut r = small_request(2, 3);
        r.num_steps = 50;
        let err = run_edit(&r, &model, &codec, &embedder, &schedule).unwrap_err();
        assert!(err.to_string().contains("schedule"), "{err}");

        let (frames, masks) = test_frames(1, 24);
        let r = EditRequest::new(frames, masks);
        let err = run_edit(&r, &model, &codec, &embedder, &schedule).unwrap_err();
        assert!(err.to_string().contains("multiples of 32"), "{err}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn cfg_matches_the_formula(
            gs in 0.0f64..12.0,
            seed in 0u64..50,
        ) {
            let mut r = rng::seeded(seed);
            let u = Tensor::<f64>::from_fn(&[8], |_| rng::normal_f64(&mut r));
            let c = Tensor::<f64>::from_fn(&[8], |_| rng::normal_f64(&mut r));
            let out = cfg_combine(&u, &c, gs).unwrap();
            for i in 0..8 {
                let expected = u.data()[i] + gs * (c.data()[i] - u.data()[i]);
                prop_assert!((out.data()[i] - expected).abs() < 1e-12);
            }
        }
    }
}
