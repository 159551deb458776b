use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Floating-point scalar the emulator is generic over.
///
/// Everything that carries gradients is written against this trait so the
/// same code runs in a 64-bit mode (used by the oracle tests) and a 32-bit
/// mode (used for training).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + NumAssign + FftNum + Sum<Self> + Display + Debug
{
    const NAME: &'static str;

    /// Lossy conversion from `f64`; panics only if the target type cannot
    /// represent any approximation (never happens for f32/f64).
    #[inline]
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 -> Real conversion")
    }

    #[inline]
    fn to64(self) -> f64 {
        self.to_f64().expect("Real -> f64 conversion")
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";
}

impl Real for f64 {
    const NAME: &'static str = "f64";
}
