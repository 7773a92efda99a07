//! Scalar abstraction shared by the network engine, the memory device and PCA.
//!
//! Training itself runs in `f64`; `f32` instantiations exist for inference and
//! for experimenting with lower precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn sigmoid(self) -> Self {
        // Split on sign so exp never overflows.
        if self >= Self::zero() {
            Self::one() / (Self::one() + (-self).exp())
        } else {
            let z = self.exp();
            z / (Self::one() + z)
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
