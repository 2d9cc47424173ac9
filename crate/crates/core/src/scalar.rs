use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the filter is generic over (`f32` or `f64`).
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal not representable")
    }

    /// Converts into `f64`, yielding NaN when the value has no representation.
    #[inline]
    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn infinity() -> Self {
        Self::lit(f64::INFINITY)
    }

    #[inline]
    fn is_finite_value(self) -> bool {
        self.as_f64().is_finite()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
