//! DDIM noise schedule, deterministic sampling/inversion steps, and the
//! memory-lean "keep only the last latent" inversion loop.
//!
//! The schedule uses scaled-linear betas: `sqrt(β_t)` interpolates linearly
//! from `sqrt(0.00085)` to `sqrt(0.012)` across the training steps. All
//! sampling is η = 0 (fully deterministic), which is what makes the
//! inversion step an exact algebraic inverse of the sampling step:
//!
//! ```text
//! ddim_step:        x̂0 = (x_t − sqrt(1−ᾱ_t)·eps) / sqrt(ᾱ_t)
//!                   x_prev = sqrt(ᾱ_prev)·x̂0 + sqrt(1−ᾱ_prev)·eps
//! ddim_invert_step: the same relation solved for x_t given x_prev
//! ```
//!
//! `t_prev = None` plays the role of "before the first step", where ᾱ = 1
//! and the sampling step returns the clean-signal estimate `x̂0` itself.
//!
//! [`NoiseSchedule::invert_to_final`] chains inversion steps across the
//! whole inference range but retains one latent per frame at all times; the
//! probe variant reports the retained state after every step so tests can
//! hold it to that contract.

use rayon::prelude::*;

use crate::conditioning::{assemble_unet_input, ConditioningBundle};
use crate::denoiser::{AttentionMode, NoisePredictor};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training-step count used when none is given.
pub const DEFAULT_TRAIN_STEPS: usize = 1000;
/// Inference-step count used when none is given.
pub const DEFAULT_INFERENCE_STEPS: usize = 50;
/// First beta of the scaled-linear range.
pub const BETA_START: f64 = 0.00085;
/// Last beta of the scaled-linear range.
pub const BETA_END: f64 = 0.012;

/// Noise schedule over training timesteps plus the strided subset used at
/// inference time. Immutable after construction.
#[derive(Debug, Clone)]
pub struct NoiseSchedule<T = f32> {
    betas: Vec<T>,
    alphas: Vec<T>,
    alpha_bars: Vec<T>,
    inference_timesteps: Vec<usize>,
}

/// Convenience free-function form of [`NoiseSchedule::new`].
pub fn make_schedule<T: Scalar>(
    num_train_steps: usize,
    num_inference_steps: usize,
) -> Result<NoiseSchedule<T>> {
    NoiseSchedule::new(num_train_steps, num_inference_steps)
}

impl<T: Scalar> Default for NoiseSchedule<T> {
    fn default() -> Self {
        // The default counts always satisfy the constructor's checks.
        NoiseSchedule::new(DEFAULT_TRAIN_STEPS, DEFAULT_INFERENCE_STEPS)
            .expect("default schedule parameters are valid")
    }
}

impl<T: Scalar> NoiseSchedule<T> {
    /// Builds a schedule with `num_train_steps` betas and
    /// `num_inference_steps` inference timesteps
    /// `t_i = (i+1)·(num_train/num_inference) − 1` (integer stride).
    pub fn new(num_train_steps: usize, num_inference_steps: usize) -> Result<Self> {
        if num_train_steps == 0 {
            return Err(Error::parameter("make_schedule", "num_train_steps must be >= 1"));
        }
        if num_inference_steps == 0 || num_inference_steps > num_train_steps {
            return Err(Error::parameter(
                "make_schedule",
                format!(
                    "num_inference_steps must be in 1..={num_train_steps}, got {num_inference_steps}"
                ),
            ));
        }

        let n = num_train_steps;
        let (s0, s1) = (BETA_START.sqrt(), BETA_END.sqrt());
        let mut betas = Vec::with_capacity(n);
        let mut alphas = Vec::with_capacity(n);
        let mut alpha_bars = Vec::with_capacity(n);
        let mut acc = 1.0f64;
        for i in 0..n {
            let frac = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let beta = (s0 + (s1 - s0) * frac).powi(2);
            acc *= 1.0 - beta;
            betas.push(T::from_f64_lossy(beta));
            alphas.push(T::from_f64_lossy(1.0 - beta));
            alpha_bars.push(T::from_f64_lossy(acc));
        }

        let stride = num_train_steps / num_inference_steps;
        let inference_timesteps = (0..num_inference_steps).map(|i| (i + 1) * stride - 1).collect();
        Ok(NoiseSchedule { betas, alphas, alpha_bars, inference_timesteps })
    }

    pub fn num_train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn num_inference_steps(&self) -> usize {
        self.inference_timesteps.len()
    }

    pub fn betas(&self) -> &[T] {
        &self.betas
    }

    pub fn alphas(&self) -> &[T] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[T] {
        &self.alpha_bars
    }

    /// Strictly increasing training-step indices visited at inference time.
    pub fn inference_timesteps(&self) -> &[usize] {
        &self.inference_timesteps
    }

    /// `ᾱ_t`, with `None` meaning "before the first step" where ᾱ = 1.
    pub fn alpha_bar(&self, t: Option<usize>) -> Result<T> {
        match t {
            None => Ok(T::one()),
            Some(i) if i < self.alpha_bars.len() => Ok(self.alpha_bars[i]),
            Some(i) => Err(Error::parameter(
                "alpha_bar",
                format!("timestep {i} out of range 0..{}", self.alpha_bars.len()),
            )),
        }
    }

    /// Fingerprint of the schedule contents (betas and inference
    /// timesteps), for run manifests. Stable across runs and platforms for
    /// a given scalar type.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(16 + self.betas.len() * 8 + self.inference_timesteps.len() * 8);
        bytes.extend_from_slice(&(self.betas.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&(self.inference_timesteps.len() as u64).to_le_bytes());
        for b in &self.betas {
            bytes.extend_from_slice(&b.to_f64_lossy().to_le_bytes());
        }
        for &t in &self.inference_timesteps {
            bytes.extend_from_slice(&(t as u64).to_le_bytes());
        }
        rng::fnv1a64(&bytes)
    }

    /// Sampling-direction coefficients `(a, b)` with
    /// `x_prev = a·x_t + b·eps`; computed in f64 and cast once.
    fn step_coefficients(&self, t: usize, t_prev: Option<usize>) -> Result<(f64, f64)> {
        if let Some(p) = t_prev {
            if p >= t {
                return Err(Error::parameter(
                    "ddim_step",
                    format!("t_prev {p} must be less than t {t}"),
                ));
            }
        }
        let ab_t = self.alpha_bar(Some(t))?.to_f64_lossy();
        let ab_p = self.alpha_bar(t_prev)?.to_f64_lossy();
        let a = (ab_p / ab_t).sqrt();
        let b = (1.0 - ab_p).sqrt() - a * (1.0 - ab_t).sqrt();
        Ok((a, b))
    }

    /// One deterministic (η = 0) DDIM sampling step from `t` down to
    /// `t_prev`; `t_prev = None` is the final step (ᾱ = 1), which returns
    /// the clean-signal estimate `x̂0`.
    pub fn ddim_step(
        &self,
        x_t: &Tensor<T>,
        eps: &Tensor<T>,
        t: usize,
        t_prev: Option<usize>,
    ) -> Result<Tensor<T>> {
        let (a, b) = self.step_coefficients(t, t_prev)?;
        x_t.scale(T::from_f64_lossy(a))
            .add_scaled(eps, T::from_f64_lossy(b))
    }

    /// Exact algebraic inverse of [`NoiseSchedule::ddim_step`] under the
    /// same `eps`: maps `x_{t_prev}` up to `x_t`.
    pub fn ddim_invert_step(
        &self,
        x_prev: &Tensor<T>,
        eps: &Tensor<T>,
        t_prev: Option<usize>,
        t: usize,
    ) -> Result<Tensor<T>> {
        let (a, b) = self.step_coefficients(t, t_prev)?;
        // x_prev = a·x_t + b·eps  ⇒  x_t = (x_prev − b·eps)/a.
        let centered = x_prev.add_scaled(eps, T::from_f64_lossy(-b))?;
        Ok(centered.scale(T::from_f64_lossy(1.0 / a)))
    }

    /// Inverts per-frame latents from the first inference timestep to the
    /// last, keeping only the current latent per frame. See
    /// [`NoiseSchedule::invert_to_final_probed`] for the monitored variant.
    ///
    /// Each input latent is treated as the state at the first inference
    /// timestep `t_0`; the result is the state at the last timestep. The
    /// denoiser runs per frame with that frame's own conditioning bundle,
    /// the unconditional embedding and per-frame self-attention, so frames
    /// are fully independent and are processed in parallel.
    pub fn invert_to_final<M>(
        &self,
        latents: &[Tensor<T>],
        bundles: &[ConditioningBundle<T>],
        model: &M,
    ) -> Result<Vec<Tensor<T>>>
    where
        M: NoisePredictor<T> + Sync,
    {
        self.invert_to_final_probed(latents, bundles, model, |_| {})
    }

    /// [`NoiseSchedule::invert_to_final`] with a probe called after every
    /// inversion step, reporting exactly what state the loop retains.
    pub fn invert_to_final_probed<M, F>(
        &self,
        latents: &[Tensor<T>],
        bundles: &[ConditioningBundle<T>],
        model: &M,
        mut probe: F,
    ) -> Result<Vec<Tensor<T>>>
    where
        M: NoisePredictor<T> + Sync,
        F: FnMut(InversionProbe),
    {
        if latents.is_empty() {
            return Err(Error::parameter("invert_to_final", "no latents given"));
        }
        if latents.len() != bundles.len() {
            return Err(Error::parameter(
                "invert_to_final",
                format!("{} latents but {} conditioning bundles", latents.len(), bundles.len()),
            ));
        }

        let ts = &self.inference_timesteps;
        let mut state: Vec<Tensor<T>> = latents.to_vec();
        for i in 1..ts.len() {
            let (t_prev, t) = (ts[i - 1], ts[i]);
            // Frames are independent here (self-attention only), so a
            // parallel map is bit-identical to the serial loop.
            state = state
                .par_iter()
                .zip(bundles.par_iter())
                .map(|(x, bundle)| {
                    let input = assemble_unet_input(x, bundle)?;
                    let eps = model.predict(
                        std::slice::from_ref(&input),
                        t,
                        &bundle.uncond_text,
                        AttentionMode::SelfPerFrame,
                    )?;
                    self.ddim_invert_step(x, &eps[0], Some(t_prev), t)
                })
                .collect::<Result<Vec<_>>>()?;
            probe(InversionProbe {
                step_index: i,
                timestep: t,
                retained_latents: state.len(),
                retained_scalars: state.iter().map(Tensor::numel).sum(),
            });
        }
        Ok(state)
    }
}

/// Snapshot of the inversion loop's retained state after one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InversionProbe {
    /// 1-based position in the inference chain (1..num_inference_steps).
    pub step_index: usize,
    /// Training timestep the state was just inverted to.
    pub timestep: usize,
    /// Latent tensors currently held — one per frame, never one per step.
    pub retained_latents: usize,
    /// Total scalars inside those latents.
    pub retained_scalars: usize,
}
