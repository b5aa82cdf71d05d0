//! Floating-point element trait for the compute kernels.
//!
//! Every layer is generic over [`Scalar`] so the same code path runs at
//! 32-bit (training default) and 64-bit (gradient checks and causality
//! oracles).

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, NumAssignOps};
use std::fmt::{Debug, Display};
use std::iter::Sum;

pub trait Scalar:
    Float
    + NumAssignOps
    + ScalarOperand
    + LinalgScalar
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Round to bfloat16 precision (round-to-nearest-even on the f32
    /// representation). Used by the emulated reduced-precision mode.
    fn round_bf16(self) -> Self {
        let x = self.as_f64() as f32;
        let bits = x.to_bits();
        let rounded = bits.wrapping_add(0x7fff + ((bits >> 16) & 1)) & 0xffff_0000;
        Self::from_f64(f64::from(f32::from_bits(rounded)))
    }
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}
