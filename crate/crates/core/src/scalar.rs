//! Scalar abstraction shared by all numeric modules.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point scalar usable throughout the crate: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + rustfft::FftNum
    + ndarray::ScalarOperand
    + Default
    + Debug
    + Display
    + LowerExp
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 constant representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(x: usize) -> Self {
        Self::from_usize(x).expect("usize representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Wraps a phase to the half-open interval `(-pi, pi]`.
    fn wrap_phase(self) -> Self {
        let two_pi = Self::TAU();
        let mut r = self - two_pi * ((self + Self::PI()) / two_pi).floor();
        // r is in [-pi, pi); move the lower end to +pi
        if r <= -Self::PI() {
            r += two_pi;
        }
        if r > Self::PI() {
            r -= two_pi;
        }
        r
    }
}

impl Real for f32 {}
impl Real for f64 {}
