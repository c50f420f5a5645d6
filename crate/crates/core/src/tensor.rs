//! Dense row-major n-d arrays and the handful of ops everything else is
//! built from: matrix product, stable softmax, 3x3 convolution, nearest
//! resampling, pixel-shuffle reshapes and group normalization.
//!
//! Conventions pinned here (each is load-bearing for reproducibility):
//! - `conv2d_3x3` is cross-correlation (no kernel flip), stride 1, zero pad 1.
//! - `nearest_downsample` samples the top-left pixel of each block, not the
//!   rounded center.
//! - `space_to_depth` raster order is channel-major over (block-row,
//!   block-col): for `f = 2` a single-channel block `[[a, b], [c, d]]`
//!   becomes the four channels `[a, b, c, d]`, i.e. output channel
//!   `c*f*f + dy*f + dx` holds input pixel `(i*f + dy, j*f + dx)`.
//!
//! All ops are pure: inputs are never mutated, outputs are fresh tensors,
//! and given finite inputs every op yields finite outputs.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array, row-major, default element type `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor after checking `data.len() == product(shape)`.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} implies {numel} elements, got {}", data.len()),
            ));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(
                "Tensor::new",
                format!("zero-sized dimension in shape {shape:?}"),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Fills from a function of the flat (row-major) index.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..numel).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("shapes {:?} and {:?} differ", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    /// `self + s * other`, fused for the scheduler's update rules.
    pub fn add_scaled(&self, other: &Self, s: T) -> Result<Self> {
        self.zip(other, "add_scaled", |a, b| a + s * b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other, op)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute elementwise difference, in `f64`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }

    /// Standard matrix product of `[m, k] x [k, n]`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = as_2d(self, "matmul")?;
        let (k2, n) = as_2d(other, "matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!(
                    "inner dimensions disagree: left {:?}, right {:?}",
                    self.shape, other.shape
                ),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in row.iter().enumerate() {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o = *o + a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2d(&self) -> Result<Self> {
        let (m, n) = as_2d(self, "transpose2d")?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Numerically stable softmax along the last axis: the row max is
    /// subtracted before exponentiation, so each slice sums to 1 and stays
    /// finite for any finite input.
    pub fn softmax_lastaxis(&self) -> Result<Self> {
        let last = match self.shape.last() {
            Some(&n) if n >= 1 => n,
            _ => {
                return Err(Error::shape(
                    "softmax_lastaxis",
                    format!("last axis must have length >= 1, shape {:?}", self.shape),
                ))
            }
        };
        let mut data = self.data.clone();
        for row in data.chunks_mut(last) {
            let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        Tensor::new(self.shape.clone(), data)
    }

    /// 3x3 convolution over `[C_in, H, W]`, stride 1, zero padding 1,
    /// cross-correlation convention (deep-learning style, no kernel flip).
    /// Weight is `[C_out, C_in, 3, 3]`, bias `[C_out]`; spatial dims are
    /// preserved.
    pub fn conv2d_3x3(&self, weight: &Self, bias: &Self) -> Result<Self> {
        let (c_in, h, w) = as_3d(self, "conv2d_3x3")?;
        if weight.rank() != 4 || weight.shape[2] != 3 || weight.shape[3] != 3 {
            return Err(Error::shape(
                "conv2d_3x3",
                format!("weight must be [C_out, C_in, 3, 3], got {:?}", weight.shape),
            ));
        }
        let c_out = weight.shape[0];
        if weight.shape[1] != c_in {
            return Err(Error::shape(
                "conv2d_3x3",
                format!(
                    "input has {c_in} channels but weight expects {}",
                    weight.shape[1]
                ),
            ));
        }
        if bias.shape != [c_out] {
            return Err(Error::shape(
                "conv2d_3x3",
                format!("bias must be [{c_out}], got {:?}", bias.shape),
            ));
        }
        let mut out = vec![T::zero(); c_out * h * w];
        for o in 0..c_out {
            let out_plane = &mut out[o * h * w..(o + 1) * h * w];
            out_plane.iter_mut().for_each(|v| *v = bias.data[o]);
            for c in 0..c_in {
                let in_plane = &self.data[c * h * w..(c + 1) * h * w];
                let kernel = &weight.data[(o * c_in + c) * 9..(o * c_in + c) * 9 + 9];
                // Row-wise accumulation: for each kernel row the three taps
                // become plain shifted slice sums, which keeps the inner
                // loops branch-free (zero padding falls out of the slice
                // bounds) and lets them vectorize.
                for i in 0..h {
                    let out_row = &mut out_plane[i * w..(i + 1) * w];
                    for dy in 0..3usize {
                        let Some(yi) = (i + dy).checked_sub(1).filter(|&yi| yi < h) else {
                            continue;
                        };
                        let in_row = &in_plane[yi * w..(yi + 1) * w];
                        let (k0, k1, k2) = (kernel[dy * 3], kernel[dy * 3 + 1], kernel[dy * 3 + 2]);
                        for (ov, &iv) in out_row[1..].iter_mut().zip(in_row) {
                            *ov = *ov + k0 * iv;
                        }
                        for (ov, &iv) in out_row.iter_mut().zip(in_row) {
                            *ov = *ov + k1 * iv;
                        }
                        for (ov, &iv) in out_row.iter_mut().zip(&in_row[1..]) {
                            *ov = *ov + k2 * iv;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c_out, h, w], out)
    }

    /// Pointwise (1x1) convolution: weight `[C_out, C_in]`, bias `[C_out]`.
    pub fn conv1x1(&self, weight: &Self, bias: &Self) -> Result<Self> {
        let (c_in, h, w) = as_3d(self, "conv1x1")?;
        let (c_out, wc_in) = as_2d(weight, "conv1x1")?;
        if wc_in != c_in {
            return Err(Error::shape(
                "conv1x1",
                format!("input has {c_in} channels but weight expects {wc_in}"),
            ));
        }
        if bias.shape != [c_out] {
            return Err(Error::shape(
                "conv1x1",
                format!("bias must be [{c_out}], got {:?}", bias.shape),
            ));
        }
        let hw = h * w;
        let mut out = vec![T::zero(); c_out * hw];
        for o in 0..c_out {
            let out_plane = &mut out[o * hw..(o + 1) * hw];
            out_plane.iter_mut().for_each(|v| *v = bias.data[o]);
            for c in 0..c_in {
                let wv = weight.data[o * c_in + c];
                let in_plane = &self.data[c * hw..(c + 1) * hw];
                for (ov, &iv) in out_plane.iter_mut().zip(in_plane) {
                    *ov = *ov + wv * iv;
                }
            }
        }
        Tensor::new(vec![c_out, h, w], out)
    }

    /// Nearest-neighbour downsampling of `[C, H, W]` by an integer factor.
    /// Output pixel `(i, j)` is input pixel `(i*factor, j*factor)`: the
    /// top-left of each block, so binary masks stay binary bit-for-bit.
    pub fn nearest_downsample(&self, factor: usize) -> Result<Self> {
        let (c, h, w) = as_3d(self, "nearest_downsample")?;
        if factor == 0 {
            return Err(Error::parameter("nearest_downsample", "factor must be >= 1"));
        }
        if h % factor != 0 || w % factor != 0 {
            return Err(Error::shape(
                "nearest_downsample",
                format!("spatial dims {h}x{w} not divisible by factor {factor}"),
            ));
        }
        let (oh, ow) = (h / factor, w / factor);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out[ch * oh * ow + i * ow + j] =
                        self.data[ch * h * w + (i * factor) * w + j * factor];
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out)
    }

    /// Nearest-neighbour upsampling of `[C, H, W]` by an integer factor;
    /// exact right inverse of `nearest_downsample` on its own outputs.
    pub fn nearest_upsample(&self, factor: usize) -> Result<Self> {
        let (c, h, w) = as_3d(self, "nearest_upsample")?;
        if factor == 0 {
            return Err(Error::parameter("nearest_upsample", "factor must be >= 1"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    out[ch * oh * ow + i * ow + j] =
                        self.data[ch * h * w + (i / factor) * w + j / factor];
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out)
    }

    /// Rearranges each `f x f` spatial block of `[C, H, W]` into `f*f`
    /// channels: `[C*f*f, H/f, W/f]`. See the module docs for the pinned
    /// raster order; `depth_to_space` is the exact inverse.
    pub fn space_to_depth(&self, f: usize) -> Result<Self> {
        let (c, h, w) = as_3d(self, "space_to_depth")?;
        if f == 0 {
            return Err(Error::parameter("space_to_depth", "factor must be >= 1"));
        }
        if h % f != 0 || w % f != 0 {
            return Err(Error::shape(
                "space_to_depth",
                format!("spatial dims {h}x{w} not divisible by factor {f}"),
            ));
        }
        let (oh, ow) = (h / f, w / f);
        let mut out = vec![T::zero(); c * f * f * oh * ow];
        for ch in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    let oc = ch * f * f + dy * f + dx;
                    for i in 0..oh {
                        for j in 0..ow {
                            out[oc * oh * ow + i * ow + j] =
                                self.data[ch * h * w + (i * f + dy) * w + (j * f + dx)];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c * f * f, oh, ow], out)
    }

    /// Exact inverse of [`Tensor::space_to_depth`].
    pub fn depth_to_space(&self, f: usize) -> Result<Self> {
        let (c_packed, h, w) = as_3d(self, "depth_to_space")?;
        if f == 0 {
            return Err(Error::parameter("depth_to_space", "factor must be >= 1"));
        }
        if c_packed % (f * f) != 0 {
            return Err(Error::shape(
                "depth_to_space",
                format!("channel count {c_packed} not divisible by {}", f * f),
            ));
        }
        let c = c_packed / (f * f);
        let (oh, ow) = (h * f, w * f);
        let mut out = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for dy in 0..f {
                for dx in 0..f {
                    let ic = ch * f * f + dy * f + dx;
                    for i in 0..h {
                        for j in 0..w {
                            out[ch * oh * ow + (i * f + dy) * ow + (j * f + dx)] =
                                self.data[ic * h * w + i * w + j];
                        }
                    }
                }
            }
        }
        Tensor::new(vec![c, oh, ow], out)
    }

    /// Group normalization over `[C, H, W]`: each group of `C/groups`
    /// channels is shifted to zero mean and unit variance (population
    /// variance, stabilized by `eps`), then the per-channel affine
    /// `gamma[c] * x + beta[c]` is applied.
    pub fn group_norm(&self, groups: usize, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        let (c, h, w) = as_3d(self, "group_norm")?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::shape(
                "group_norm",
                format!("channel count {c} not divisible by groups {groups}"),
            ));
        }
        if eps <= T::zero() {
            return Err(Error::parameter("group_norm", "eps must be > 0"));
        }
        if gamma.shape != [c] || beta.shape != [c] {
            return Err(Error::shape(
                "group_norm",
                format!(
                    "gamma/beta must be [{c}], got {:?} / {:?}",
                    gamma.shape, beta.shape
                ),
            ));
        }
        let per_group = c / groups;
        let plane = h * w;
        let n = T::from_f64_lossy((per_group * plane) as f64);
        let mut out = vec![T::zero(); self.data.len()];
        for g in 0..groups {
            let span = &self.data[g * per_group * plane..(g + 1) * per_group * plane];
            let mean = span.iter().cloned().sum::<T>() / n;
            let var = span.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv_std = (var + eps).sqrt().recip();
            for cc in 0..per_group {
                let ch = g * per_group + cc;
                let (gm, bt) = (gamma.data[ch], beta.data[ch]);
                for p in 0..plane {
                    let idx = ch * plane + p;
                    out[idx] = gm * ((self.data[idx] - mean) * inv_std) + bt;
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Concatenates `[C_i, H, W]` tensors along the channel axis, in the
    /// order given.
    pub fn concat_channels(parts: &[&Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::shape("concat_channels", "no tensors given"));
        }
        let (_, h, w) = as_3d(parts[0], "concat_channels")?;
        let mut channels = 0;
        for p in parts {
            let (c, ph, pw) = as_3d(p, "concat_channels")?;
            if (ph, pw) != (h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("spatial dims {ph}x{pw} disagree with {h}x{w}"),
                ));
            }
            channels += c;
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![channels, h, w], data)
    }

    /// Stacks rank-2 tensors with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Self]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no tensors given"));
        }
        let (_, n) = as_2d(parts[0], "concat_rows")?;
        let mut rows = 0;
        for p in parts {
            let (m, pn) = as_2d(p, "concat_rows")?;
            if pn != n {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column counts {pn} and {n} disagree"),
                ));
            }
            rows += m;
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![rows, n], data)
    }

    /// Copy of columns `range` of a rank-2 tensor.
    pub fn slice_cols(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let (m, n) = as_2d(self, "slice_cols")?;
        if range.end > n || range.start >= range.end {
            return Err(Error::shape(
                "slice_cols",
                format!("range {range:?} out of bounds for {n} columns"),
            ));
        }
        let width = range.end - range.start;
        let mut data = Vec::with_capacity(m * width);
        for i in 0..m {
            data.extend_from_slice(&self.data[i * n + range.start..i * n + range.end]);
        }
        Tensor::new(vec![m, width], data)
    }

    /// Copy of channels `range` of a `[C, H, W]` tensor.
    pub fn slice_channels(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let (c, h, w) = as_3d(self, "slice_channels")?;
        if range.end > c || range.start >= range.end {
            return Err(Error::shape(
                "slice_channels",
                format!("range {range:?} out of bounds for {c} channels"),
            ));
        }
        let data = self.data[range.start * h * w..range.end * h * w].to_vec();
        Tensor::new(vec![range.end - range.start, h, w], data)
    }
}

fn as_2d<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(Error::shape(op, format!("expected rank-2 tensor, got {other:?}"))),
    }
}

fn as_3d<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::shape(op, format!("expected rank-3 tensor, got {other:?}"))),
    }
}
