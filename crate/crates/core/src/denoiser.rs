//! Fixed-weight U-Net-style noise predictor.
//!
//! The model maps a 9-channel conditioned latent (4 noisy latent channels,
//! 4 masked-image latent channels, 1 mask channel) to a 4-channel noise
//! estimate. It is never trained: all weights come from one seed, which is
//! enough because every property the editing pipeline relies on — attention
//! reductions, batching invariance, determinism — holds for arbitrary
//! weights.
//!
//! Architecture, at the default 8×8 latent resolution:
//!
//! ```text
//! conv_in 9→32                                   8×8
//! enc0: res 32→32                                 8×8   ──────────┐
//! enc1: res 32→64, self/extended attn, cross attn 4×4   ────┐     │
//! mid:  res 64→64, attn, cross attn, res 64→64    2×2        │     │
//! dec1: res (64+64)→64 after 2× upsample          4×4   ◄───┘     │
//! dec0: res (64+32)→32 after 2× upsample          8×8   ◄─────────┘
//! out:  group_norm + SiLU + conv 32→4             8×8
//! ```
//!
//! Residual blocks are `norm → SiLU → conv3x3 → (+time) → norm → SiLU →
//! conv3x3` with an identity or 1×1-projected skip. The timestep enters as
//! a 64-dim sinusoidal embedding pushed through a two-layer MLP, then
//! projected per block onto its channel count. Attention blocks flatten the
//! spatial grid to `h·w` tokens of dim = channel width, with 4 heads of
//! dim 16 at both attention resolutions.
//!
//! [`AttentionMode`] switches the self-attention blocks between per-frame
//! operation and the cross-frame extended variant; nothing else in the
//! forward path reads the mode, and the weights are shared between modes.

use std::io::{self, Read, Write};

use crate::attention::{extended_attention, multi_head_attention, AttentionWeights};
use crate::conditioning::{TextEmbedding, TEXT_DIM, TEXT_TOKENS};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights;

/// Channels expected on the way in: noisy latent + masked-image latent + mask.
pub const IN_CHANNELS: usize = 9;
/// Channels produced: the predicted noise over the latent.
pub const OUT_CHANNELS: usize = 4;
/// Channel width at full latent resolution.
pub const BASE_WIDTH: usize = 32;
/// Channel width at the two attention-carrying resolutions.
pub const MID_WIDTH: usize = 64;
/// Sinusoidal timestep embedding width.
pub const TIME_EMBED_DIM: usize = 64;
/// Width of the shared timestep feature after the MLP.
pub const TIME_FEATURE_DIM: usize = 128;
/// Heads in every attention block (head dim = width / heads = 16).
pub const ATTENTION_HEADS: usize = 4;
/// Group count for all group normalisation layers.
pub const NORM_GROUPS: usize = 8;
/// Seed used when no explicit weight seed is given.
pub const DEFAULT_WEIGHT_SEED: u64 = 42;

/// Standard deviation of the normal init applied to weight matrices and
/// convolution kernels (biases start at zero, norm gains at one).
const INIT_STD: f64 = 0.02;
const NORM_EPS: f64 = 1e-5;

/// How the self-attention blocks treat a batch of frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Each frame attends only to its own tokens; frames in a batch are
    /// processed fully independently.
    SelfPerFrame,
    /// Keys and values are concatenated across the whole batch, so every
    /// frame attends to the token pool of all frames.
    ExtendedAcrossBatch,
}

/// Anything that can estimate the noise in a batch of conditioned latents.
///
/// The inversion and editing loops are written against this trait so tests
/// can substitute closed-form stubs for the real network.
pub trait NoisePredictor<T: Scalar> {
    /// Predicts per-frame noise `[4, h, w]` for 9-channel inputs sharing
    /// one timestep and one text embedding.
    fn predict(
        &self,
        frames: &[Tensor<T>],
        t: usize,
        text: &TextEmbedding<T>,
        mode: AttentionMode,
    ) -> Result<Vec<Tensor<T>>>;
}

/// Sinusoidal position encoding of a timestep index.
///
/// The first `dim/2` entries are `sin(t·ω_i)` and the rest `cos(t·ω_i)`
/// with `ω_i = 10000^(-i/(dim/2))`; `dim` must be even and nonzero.
pub fn sinusoidal_time_embedding<T: Scalar>(t: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::parameter(
            "sinusoidal_time_embedding",
            format!("dim must be even and nonzero, got {dim}"),
        ));
    }
    let half = dim / 2;
    let mut data = vec![T::zero(); dim];
    for i in 0..half {
        let freq = 10000f64.powf(-(i as f64) / half as f64);
        let angle = t as f64 * freq;
        data[i] = T::from_f64_lossy(angle.sin());
        data[half + i] = T::from_f64_lossy(angle.cos());
    }
    Tensor::new(vec![dim], data)
}

// ---------------------------------------------------------------------------
// Parameter layout
//
// All tensors live in one `Vec` in declared order; the structs below hold
// indices into it. `build_layout` is the single place that order, names,
// shapes and init kinds are written down, so seeding, saving and loading
// can never disagree about any of them.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ParamKind {
    /// Normal(0, INIT_STD) at seed time.
    Weight,
    /// Zeros at seed time (conv/linear biases and norm shifts).
    Bias,
    /// Ones at seed time (norm gains).
    Gamma,
}

#[derive(Debug, Clone, Copy)]
struct P(usize);

#[derive(Debug, Clone, Copy)]
struct Conv {
    w: P,
    b: P,
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: P,
    b: P,
}

#[derive(Debug, Clone, Copy)]
struct NormP {
    gamma: P,
    beta: P,
}

#[derive(Debug, Clone, Copy)]
struct Res {
    norm1: NormP,
    conv1: Conv,
    time: Lin,
    norm2: NormP,
    conv2: Conv,
    /// 1×1 projection for the residual path when in/out widths differ.
    skip: Option<P>,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    norm: NormP,
    q: P,
    k: P,
    v: P,
    out: P,
}

#[derive(Debug, Clone)]
struct Layout {
    conv_in: Conv,
    time_fc1: Lin,
    time_fc2: Lin,
    enc0: Res,
    enc1: Res,
    attn1: Attn,
    xattn1: Attn,
    mid1: Res,
    attn2: Attn,
    xattn2: Attn,
    mid2: Res,
    dec1: Res,
    dec0: Res,
    out_norm: NormP,
    out_conv: Conv,
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, ParamKind)>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind) -> P {
        self.specs.push((name, shape, kind));
        P(self.specs.len() - 1)
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) -> Conv {
        Conv {
            w: self.push(format!("{name}.weight"), vec![c_out, c_in, 3, 3], ParamKind::Weight),
            b: self.push(format!("{name}.bias"), vec![c_out], ParamKind::Bias),
        }
    }

    fn lin(&mut self, name: &str, d_in: usize, d_out: usize) -> Lin {
        Lin {
            w: self.push(format!("{name}.weight"), vec![d_in, d_out], ParamKind::Weight),
            b: self.push(format!("{name}.bias"), vec![d_out], ParamKind::Bias),
        }
    }

    fn norm(&mut self, name: &str, c: usize) -> NormP {
        NormP {
            gamma: self.push(format!("{name}.gamma"), vec![c], ParamKind::Gamma),
            beta: self.push(format!("{name}.beta"), vec![c], ParamKind::Bias),
        }
    }

    fn res(&mut self, name: &str, c_in: usize, c_out: usize) -> Res {
        Res {
            norm1: self.norm(&format!("{name}.norm1"), c_in),
            conv1: self.conv(&format!("{name}.conv1"), c_in, c_out),
            time: self.lin(&format!("{name}.time"), TIME_FEATURE_DIM, c_out),
            norm2: self.norm(&format!("{name}.norm2"), c_out),
            conv2: self.conv(&format!("{name}.conv2"), c_out, c_out),
            skip: (c_in != c_out)
                .then(|| self.push(format!("{name}.skip.weight"), vec![c_out, c_in], ParamKind::Weight)),
        }
    }

    fn attn(&mut self, name: &str, c: usize, kv_in: usize) -> Attn {
        Attn {
            norm: self.norm(&format!("{name}.norm"), c),
            q: self.push(format!("{name}.q.weight"), vec![c, c], ParamKind::Weight),
            k: self.push(format!("{name}.k.weight"), vec![kv_in, c], ParamKind::Weight),
            v: self.push(format!("{name}.v.weight"), vec![kv_in, c], ParamKind::Weight),
            out: self.push(format!("{name}.out.weight"), vec![c, c], ParamKind::Weight),
        }
    }
}

fn build_layout() -> (Layout, Vec<(String, Vec<usize>, ParamKind)>) {
    let mut b = LayoutBuilder { specs: Vec::new() };
    let layout = Layout {
        conv_in: b.conv("conv_in", IN_CHANNELS, BASE_WIDTH),
        time_fc1: b.lin("time.fc1", TIME_EMBED_DIM, TIME_FEATURE_DIM),
        time_fc2: b.lin("time.fc2", TIME_FEATURE_DIM, TIME_FEATURE_DIM),
        enc0: b.res("enc0", BASE_WIDTH, BASE_WIDTH),
        enc1: b.res("enc1", BASE_WIDTH, MID_WIDTH),
        attn1: b.attn("attn1", MID_WIDTH, MID_WIDTH),
        xattn1: b.attn("xattn1", MID_WIDTH, TEXT_DIM),
        mid1: b.res("mid1", MID_WIDTH, MID_WIDTH),
        attn2: b.attn("attn2", MID_WIDTH, MID_WIDTH),
        xattn2: b.attn("xattn2", MID_WIDTH, TEXT_DIM),
        mid2: b.res("mid2", MID_WIDTH, MID_WIDTH),
        dec1: b.res("dec1", 2 * MID_WIDTH, MID_WIDTH),
        dec0: b.res("dec0", MID_WIDTH + BASE_WIDTH, BASE_WIDTH),
        out_norm: b.norm("out.norm", BASE_WIDTH),
        out_conv: b.conv("out.conv", BASE_WIDTH, OUT_CHANNELS),
    };
    (layout, b.specs)
}

fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v / (T::one() + (-v).exp()))
}

/// `[C, H, W]` → `[H·W, C]`: one token per spatial position.
fn tokens_from_chw<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    match x.shape() {
        &[c, h, w] => {
            let hw = h * w;
            let mut data = vec![T::zero(); hw * c];
            for ch in 0..c {
                for p in 0..hw {
                    data[p * c + ch] = x.data()[ch * hw + p];
                }
            }
            Tensor::new(vec![hw, c], data)
        }
        other => Err(Error::shape(
            "tokens_from_chw",
            format!("expected [C, H, W], got {other:?}"),
        )),
    }
}

/// Inverse of [`tokens_from_chw`] for a known spatial size.
fn chw_from_tokens<T: Scalar>(tokens: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    match tokens.shape() {
        &[hw, c] if hw == h * w => {
            let mut data = vec![T::zero(); c * hw];
            for ch in 0..c {
                for p in 0..hw {
                    data[ch * hw + p] = tokens.data()[p * c + ch];
                }
            }
            Tensor::new(vec![c, h, w], data)
        }
        other => Err(Error::shape(
            "chw_from_tokens",
            format!("expected [{}, C] tokens, got {other:?}", h * w),
        )),
    }
}

/// `x·W + b` for rank-2 `x` of shape `[n, d_in]`.
fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let y = x.matmul(w)?;
    let (n, d_out) = (y.shape()[0], y.shape()[1]);
    if b.shape() != [d_out] {
        return Err(Error::shape(
            "linear",
            format!("bias must be [{d_out}], got {:?}", b.shape()),
        ));
    }
    let mut data = y.into_data();
    for i in 0..n {
        for j in 0..d_out {
            data[i * d_out + j] += b.data()[j];
        }
    }
    Tensor::new(vec![n, d_out], data)
}

/// The noise-prediction network. Weights are immutable after construction;
/// [`DenoiserModel::forward`] is pure and safe to call concurrently.
#[derive(Debug, Clone)]
pub struct DenoiserModel<T = f32> {
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> DenoiserModel<T> {
    /// Generates all weights from `seed`: matrices and kernels are drawn
    /// from Normal(0, 0.02), biases start at zero and norm gains at one.
    pub fn from_seed(seed: u64) -> Self {
        let (layout, specs) = build_layout();
        let mut r = rng::seeded(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, kind) in specs {
            let tensor = match kind {
                ParamKind::Weight => Tensor::from_fn(&shape, |_| {
                    T::from_f64_lossy(rng::normal_f64(&mut r) * INIT_STD)
                }),
                ParamKind::Bias => Tensor::zeros(&shape),
                ParamKind::Gamma => Tensor::full(&shape, T::one()),
            };
            names.push(name);
            params.push(tensor);
        }
        DenoiserModel { layout, names, params }
    }

    /// All parameters as `(name, tensor)` in declared architecture order.
    pub fn parameters(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(self.params.iter())
    }

    /// Writes the weight file (magic `TIE1`, entries in declared order).
    pub fn save_weights<W: Write>(&self, out: W) -> io::Result<()> {
        weights::write_entries(out, self.parameters())
    }

    /// Reads a weight file produced by [`DenoiserModel::save_weights`].
    pub fn load_weights<R: Read>(input: R) -> Result<Self> {
        Self::from_entries(weights::read_entries(input)?)
    }

    /// Builds a model from named tensors, which must match the declared
    /// architecture order, names and shapes exactly.
    pub fn from_entries(entries: Vec<(String, Tensor<f32>)>) -> Result<Self> {
        let (layout, specs) = build_layout();
        if entries.len() != specs.len() {
            return Err(Error::parameter(
                "load_weights",
                format!("expected {} parameters, got {}", specs.len(), entries.len()),
            ));
        }
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (idx, ((name, tensor), (want_name, want_shape, _))) in
            entries.into_iter().zip(specs).enumerate()
        {
            if name != want_name {
                return Err(Error::parameter(
                    "load_weights",
                    format!("entry {idx} is \"{name}\", expected \"{want_name}\""),
                ));
            }
            if tensor.shape() != want_shape {
                return Err(Error::parameter(
                    "load_weights",
                    format!(
                        "\"{name}\" has shape {:?}, expected {want_shape:?}",
                        tensor.shape()
                    ),
                ));
            }
            let data = tensor.data().iter().map(|&v| T::from_f64_lossy(v as f64)).collect();
            names.push(name);
            params.push(Tensor::new(want_shape, data)?);
        }
        Ok(DenoiserModel { layout, names, params })
    }

    fn p(&self, i: P) -> &Tensor<T> {
        &self.params[i.0]
    }

    fn attn_weights(&self, a: &Attn) -> AttentionWeights<T> {
        AttentionWeights {
            w_q: self.p(a.q).clone(),
            w_k: self.p(a.k).clone(),
            w_v: self.p(a.v).clone(),
            w_out: self.p(a.out).clone(),
        }
    }

    fn group_norm(&self, x: &Tensor<T>, n: &NormP) -> Result<Tensor<T>> {
        x.group_norm(
            NORM_GROUPS,
            self.p(n.gamma),
            self.p(n.beta),
            T::from_f64_lossy(NORM_EPS),
        )
    }

    /// Shared timestep feature: sinusoidal embedding through the two-layer
    /// MLP, returned with SiLU already applied so residual blocks can
    /// project it directly.
    fn time_feature(&self, t: usize) -> Result<Tensor<T>> {
        let emb = sinusoidal_time_embedding(t, TIME_EMBED_DIM)?.reshape(&[1, TIME_EMBED_DIM])?;
        let l = &self.layout;
        let h = silu(&linear(&emb, self.p(l.time_fc1.w), self.p(l.time_fc1.b))?);
        let feat = linear(&h, self.p(l.time_fc2.w), self.p(l.time_fc2.b))?;
        Ok(silu(&feat))
    }

    fn res_forward(&self, r: &Res, x: &Tensor<T>, time_feat: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = silu(&self.group_norm(x, &r.norm1)?)
            .conv2d_3x3(self.p(r.conv1.w), self.p(r.conv1.b))?;

        let t_bias = linear(time_feat, self.p(r.time.w), self.p(r.time.b))?;
        let (c_out, hw) = (h.shape()[0], h.shape()[1] * h.shape()[2]);
        {
            let data = h.data_mut();
            for c in 0..c_out {
                let add = t_bias.data()[c];
                for v in &mut data[c * hw..(c + 1) * hw] {
                    *v += add;
                }
            }
        }

        let h = silu(&self.group_norm(&h, &r.norm2)?)
            .conv2d_3x3(self.p(r.conv2.w), self.p(r.conv2.b))?;
        let skip = match r.skip {
            Some(w) => x.conv1x1(self.p(w), &Tensor::zeros(&[c_out]))?,
            None => x.clone(),
        };
        h.add(&skip)
    }

    /// Self-attention block over a batch. In `SelfPerFrame` each frame
    /// attends to itself; in `ExtendedAcrossBatch` keys/values come from
    /// every frame. Residual add either way.
    fn self_attn_forward(
        &self,
        a: &Attn,
        frames: &[Tensor<T>],
        mode: AttentionMode,
    ) -> Result<Vec<Tensor<T>>> {
        let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
        let tokens: Vec<Tensor<T>> = frames
            .iter()
            .map(|x| tokens_from_chw(&self.group_norm(x, &a.norm)?))
            .collect::<Result<_>>()?;
        let weights = self.attn_weights(a);
        let outs: Vec<Tensor<T>> = match mode {
            AttentionMode::ExtendedAcrossBatch => {
                extended_attention(&tokens, &weights, ATTENTION_HEADS)?
            }
            AttentionMode::SelfPerFrame => tokens
                .iter()
                .map(|tk| multi_head_attention(tk, tk, &weights, ATTENTION_HEADS))
                .collect::<Result<_>>()?,
        };
        frames
            .iter()
            .zip(&outs)
            .map(|(x, o)| x.add(&chw_from_tokens(o, h, w)?))
            .collect()
    }

    /// Cross-attention block: queries from spatial tokens, keys/values from
    /// the text embedding. Always per-frame.
    fn cross_attn_forward(
        &self,
        a: &Attn,
        frames: &[Tensor<T>],
        text: &TextEmbedding<T>,
    ) -> Result<Vec<Tensor<T>>> {
        let (h, w) = (frames[0].shape()[1], frames[0].shape()[2]);
        let weights = self.attn_weights(a);
        frames
            .iter()
            .map(|x| {
                let tokens = tokens_from_chw(&self.group_norm(x, &a.norm)?)?;
                let o = multi_head_attention(&tokens, text, &weights, ATTENTION_HEADS)?;
                x.add(&chw_from_tokens(&o, h, w)?)
            })
            .collect()
    }

    fn validate_inputs(&self, frames: &[Tensor<T>], text: &TextEmbedding<T>) -> Result<()> {
        if frames.is_empty() {
            return Err(Error::parameter("forward", "empty frame batch"));
        }
        let first = frames[0].shape().to_vec();
        for f in frames {
            match f.shape() {
                &[c, h, w] => {
                    if c != IN_CHANNELS {
                        return Err(Error::shape(
                            "forward",
                            format!("input has {c} channels, expected {IN_CHANNELS}"),
                        ));
                    }
                    if h == 0 || h % 4 != 0 || w % 4 != 0 {
                        return Err(Error::shape(
                            "forward",
                            format!("spatial dims {h}x{w} must be nonzero multiples of 4"),
                        ));
                    }
                }
                other => {
                    return Err(Error::shape(
                        "forward",
                        format!("expected [9, h, w] input, got {other:?}"),
                    ))
                }
            }
            if f.shape() != first {
                return Err(Error::shape(
                    "forward",
                    format!("frames disagree on shape: {:?} vs {first:?}", f.shape()),
                ));
            }
        }
        if text.shape() != [TEXT_TOKENS, TEXT_DIM] {
            return Err(Error::shape(
                "forward",
                format!(
                    "text embedding must be [{TEXT_TOKENS}, {TEXT_DIM}], got {:?}",
                    text.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Predicts the noise in each frame's latent.
    ///
    /// All frames share the timestep `t`, the text embedding and the
    /// attention mode. Outside the self-attention blocks every stage is
    /// strictly per-frame, so in [`AttentionMode::SelfPerFrame`] the result
    /// is identical to running each frame through its own batch.
    pub fn forward(
        &self,
        frames: &[Tensor<T>],
        t: usize,
        text: &TextEmbedding<T>,
        mode: AttentionMode,
    ) -> Result<Vec<Tensor<T>>> {
        self.validate_inputs(frames, text)?;
        let l = self.layout.clone();
        let time_feat = self.time_feature(t)?;

        let per_frame = |xs: &[Tensor<T>], f: &dyn Fn(&Tensor<T>) -> Result<Tensor<T>>| {
            xs.iter().map(f).collect::<Result<Vec<_>>>()
        };

        // Encoder, full resolution.
        let e0 = per_frame(frames, &|x| {
            self.res_forward(&l.enc0, &x.conv2d_3x3(self.p(l.conv_in.w), self.p(l.conv_in.b))?, &time_feat)
        })?;

        // Encoder, half resolution, with both attention blocks.
        let x = per_frame(&e0, &|x| {
            self.res_forward(&l.enc1, &x.nearest_downsample(2)?, &time_feat)
        })?;
        let x = self.self_attn_forward(&l.attn1, &x, mode)?;
        let e1 = self.cross_attn_forward(&l.xattn1, &x, text)?;

        // Middle, quarter resolution.
        let x = per_frame(&e1, &|x| {
            self.res_forward(&l.mid1, &x.nearest_downsample(2)?, &time_feat)
        })?;
        let x = self.self_attn_forward(&l.attn2, &x, mode)?;
        let x = self.cross_attn_forward(&l.xattn2, &x, text)?;
        let m = per_frame(&x, &|x| self.res_forward(&l.mid2, x, &time_feat))?;

        // Decoder with skip concatenations.
        let d1: Vec<Tensor<T>> = m
            .iter()
            .zip(&e1)
            .map(|(x, skip)| {
                let cat = Tensor::concat_channels(&[&x.nearest_upsample(2)?, skip])?;
                self.res_forward(&l.dec1, &cat, &time_feat)
            })
            .collect::<Result<_>>()?;
        let d0: Vec<Tensor<T>> = d1
            .iter()
            .zip(&e0)
            .map(|(x, skip)| {
                let cat = Tensor::concat_channels(&[&x.nearest_upsample(2)?, skip])?;
                self.res_forward(&l.dec0, &cat, &time_feat)
            })
            .collect::<Result<_>>()?;

        per_frame(&d0, &|x| {
            silu(&self.group_norm(x, &l.out_norm)?)
                .conv2d_3x3(self.p(l.out_conv.w), self.p(l.out_conv.b))
        })
    }
}

impl<T: Scalar> NoisePredictor<T> for DenoiserModel<T> {
    fn predict(
        &self,
        frames: &[Tensor<T>],
        t: usize,
        text: &TextEmbedding<T>,
        mode: AttentionMode,
    ) -> Result<Vec<Tensor<T>>> {
        self.forward(frames, t, text, mode)
    }
}
