//! Scalar abstraction for the numeric core.
//!
//! Every algebraic component in this crate (tensor ops, codec, scheduler,
//! attention, metrics) is written against [`Scalar`] so the same code runs
//! in `f32` and `f64`. The shipped pipeline uses the `f32` aliases exported
//! from the crate root; `f64` instantiations are mainly useful as
//! high-precision oracles in tests.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point element type accepted by [`crate::tensor::Tensor`].
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used when materializing seeded
    /// pseudo-random draws (always generated in `f64` so that `f32` and
    /// `f64` models share one bit-reproducible stream).
    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite f64 converts to any Scalar")
    }

    /// Widening conversion for accumulations and reporting.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
