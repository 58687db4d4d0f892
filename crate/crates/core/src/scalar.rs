//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point element type: `f32` or `f64`.
///
/// Files and reports are always written as `f64`, so an `f32` pipeline
/// round-trips losslessly through the same on-disk formats.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless for `f32` and `f64`.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion from f64")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion to f64")
    }

    fn from_usize_lossy(v: usize) -> Self {
        Self::from_usize(v).expect("scalar conversion from usize")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
