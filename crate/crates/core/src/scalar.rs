use std::fmt::{Debug, Display};

/// Floating-point scalar used by the score, calibration and transform code.
///
/// Implemented for `f32` and `f64`. The Monte-Carlo harness and the tuners
/// run in `f64`; see the type aliases at the crate root.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::FloatConst
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from `f64` (rounds for `f32`).
    fn of(x: f64) -> Self {
        <Self as num_traits::FromPrimitive>::from_f64(x).expect("f64 is representable")
    }

    fn of_usize(n: usize) -> Self {
        <Self as num_traits::FromPrimitive>::from_usize(n).expect("usize is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
