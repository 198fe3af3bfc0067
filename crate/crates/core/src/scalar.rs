//! Scalar abstraction: every numeric routine in this crate is generic over a
//! floating-point scalar so the same code runs in f32 or f64.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable in both dense linear algebra and
/// distribution arithmetic.
pub trait Scalar:
    nalgebra::RealField + Float + FromPrimitive + ToPrimitive + Copy + Default
{
    /// Lossless-enough conversion from f64 for constants and RNG output.
    fn from_f64_c(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 constant conversion")
    }

    /// Conversion to f64 for handing parameters to samplers.
    fn to_f64_c(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("scalar to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
