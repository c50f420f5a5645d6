//! Scaled dot-product attention and its cross-frame "extended" variant.
//!
//! Three layers of API, from raw to composed:
//!
//! * [`scaled_dot_attention`] — the bare `softmax(Q·Kᵀ/√d)·V` kernel.
//! * [`multi_head_attention`] — projects queries and keys/values through
//!   [`AttentionWeights`], splits heads, applies the kernel per head and
//!   merges through the output projection. Used as-is for cross-attention
//!   (queries from spatial tokens, keys/values from text tokens).
//! * [`extended_attention`] — the cross-frame variant: each frame keeps its
//!   own queries while keys and values are concatenated across every frame
//!   in the batch, so all frames attend to a shared token pool. With a
//!   single frame it reduces bit-for-bit to ordinary self-attention.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Projection weights shared by the self-, cross- and extended-attention
/// paths.
///
/// Shapes: `w_q` is `[d_q_in, d]`, `w_k` and `w_v` are `[d_kv_in, d]`, and
/// `w_out` is `[d, d_out]`, where `d` is the attention width split across
/// heads. For self-attention all four are square.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T = f32> {
    pub w_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub w_out: Tensor<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    /// Attention width (columns of the query projection).
    pub fn width(&self) -> usize {
        self.w_q.shape()[1]
    }

    fn validate(&self, heads: usize) -> Result<()> {
        for (name, w) in [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_out", &self.w_out),
        ] {
            if w.rank() != 2 {
                return Err(Error::shape(
                    "attention",
                    format!("{name} must be rank-2, got {:?}", w.shape()),
                ));
            }
        }
        let d = self.width();
        if self.w_k.shape()[1] != d || self.w_v.shape()[1] != d || self.w_out.shape()[0] != d {
            return Err(Error::shape(
                "attention",
                format!(
                    "inner widths disagree: w_q {:?}, w_k {:?}, w_v {:?}, w_out {:?}",
                    self.w_q.shape(),
                    self.w_k.shape(),
                    self.w_v.shape(),
                    self.w_out.shape()
                ),
            ));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::parameter(
                "attention",
                format!("width {d} not divisible into {heads} heads"),
            ));
        }
        Ok(())
    }
}

/// `softmax(Q·Kᵀ/√d)·V` over a single head.
///
/// `q` is `[n, d]`, `k` is `[m, d]`, `v` is `[m, d_v]`; the result is
/// `[n, d_v]`.
pub fn scaled_dot_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (qr, kr, vr) = (q.shape(), k.shape(), v.shape());
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("expected rank-2 inputs, got Q {qr:?}, K {kr:?}, V {vr:?}"),
        ));
    }
    if qr[1] != kr[1] {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("query width {} != key width {}", qr[1], kr[1]),
        ));
    }
    if kr[0] != vr[0] {
        return Err(Error::shape(
            "scaled_dot_attention",
            format!("key count {} != value count {}", kr[0], vr[0]),
        ));
    }
    let scale = T::from_f64_lossy(1.0 / (qr[1] as f64).sqrt());
    let logits = q.matmul(&k.transpose2d()?)?.scale(scale);
    logits.softmax_lastaxis()?.matmul(v)
}

/// Splits `d` columns into `heads` equal slices, runs the attention kernel
/// per head and concatenates the head outputs back into `[n, d]`.
fn attend_per_head<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let n = q.shape()[0];
    let d = q.shape()[1];
    let head_dim = d / heads;
    let mut merged = vec![T::zero(); n * d];
    for h in 0..heads {
        let cols = h * head_dim..(h + 1) * head_dim;
        let out = scaled_dot_attention(
            &q.slice_cols(cols.clone())?,
            &k.slice_cols(cols.clone())?,
            &v.slice_cols(cols.clone())?,
        )?;
        for i in 0..n {
            let row = &out.data()[i * head_dim..(i + 1) * head_dim];
            merged[i * d + cols.start..i * d + cols.end].copy_from_slice(row);
        }
    }
    Tensor::new(vec![n, d], merged)
}

/// Multi-head attention with separate query and key/value sources.
///
/// `queries` is `[n, d_q_in]` and `keys_values` is `[m, d_kv_in]`; both are
/// projected through `weights` before the per-head kernel, and the merged
/// head outputs pass through `w_out`. Self-attention is the special case
/// `keys_values == queries`.
pub fn multi_head_attention<T: Scalar>(
    queries: &Tensor<T>,
    keys_values: &Tensor<T>,
    weights: &AttentionWeights<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    weights.validate(heads)?;
    let q = queries.matmul(&weights.w_q)?;
    let k = keys_values.matmul(&weights.w_k)?;
    let v = keys_values.matmul(&weights.w_v)?;
    attend_per_head(&q, &k, &v, heads)?.matmul(&weights.w_out)
}

/// Cross-frame extended attention over a batch of per-frame token tensors.
///
/// Every frame contributes its projected keys and values to one pool of
/// `B·n` tokens; each frame then attends to that pool with its own queries:
///
/// ```text
/// Q_i = frame_i·W_Q    K = [frame_1·W_K; …; frame_B·W_K]    V likewise
/// out_i = attend(Q_i, K, V)·W_out
/// ```
///
/// All frames must share the token count `n` and width `d`. With `B = 1`
/// this is exactly [`multi_head_attention`] of a frame with itself.
pub fn extended_attention<T: Scalar>(
    frames: &[Tensor<T>],
    weights: &AttentionWeights<T>,
    heads: usize,
) -> Result<Vec<Tensor<T>>> {
    weights.validate(heads)?;
    if frames.is_empty() {
        return Err(Error::parameter("extended_attention", "empty frame batch"));
    }
    let first = frames[0].shape().to_vec();
    for f in frames {
        if f.rank() != 2 || f.shape() != first {
            return Err(Error::shape(
                "extended_attention",
                format!(
                    "frames must share one [n, d] shape; got {:?} and {first:?}",
                    f.shape()
                ),
            ));
        }
    }
    let keys: Vec<Tensor<T>> = frames
        .iter()
        .map(|f| f.matmul(&weights.w_k))
        .collect::<Result<_>>()?;
    let values: Vec<Tensor<T>> = frames
        .iter()
        .map(|f| f.matmul(&weights.w_v))
        .collect::<Result<_>>()?;
    let k_all = Tensor::concat_rows(&keys.iter().collect::<Vec<_>>())?;
    let v_all = Tensor::concat_rows(&values.iter().collect::<Vec<_>>())?;
    frames
        .iter()
        .map(|f| {
            let q = f.matmul(&weights.w_q)?;
            attend_per_head(&q, &k_all, &v_all, heads)?.matmul(&weights.w_out)
        })
        .collect()
}
