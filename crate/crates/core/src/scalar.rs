//! Scalar abstractions.
//!
//! Two levels are used throughout the crate:
//!
//! * [`Field`] is enough for the closed-form single-inclusion algebra and is
//!   implemented for `f32`, `f64` and the exact rationals `Ratio<i64>` /
//!   `Ratio<i128>`, so identities can be checked without rounding.
//! * [`Real`] is what the samplers, geometry and the spectral solver need:
//!   a floating point type that rustfft can transform.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FloatConst, FromPrimitive, Num, NumCast, ToPrimitive};
use rustfft::FftNum;

/// Ordered field with conversion from small integers.
pub trait Field: Num + Copy + PartialOrd + FromPrimitive + Debug {
    /// Equality up to rounding relative to `scale` (exact for rationals).
    fn approx_eq_scaled(self, other: Self, scale: Self) -> bool;

    fn from_usize_exact(n: usize) -> Self {
        Self::from_usize(n).expect("small integer must be representable")
    }
}

macro_rules! impl_field_float {
    ($t:ty, $tol:expr) => {
        impl Field for $t {
            fn approx_eq_scaled(self, other: Self, scale: Self) -> bool {
                let scale = scale.abs().max(self.abs()).max(other.abs());
                (self - other).abs() <= $tol * scale
            }
        }
    };
}

impl_field_float!(f32, 1e-6);
impl_field_float!(f64, 1e-14);

macro_rules! impl_field_ratio {
    ($t:ty) => {
        impl Field for Ratio<$t> {
            fn approx_eq_scaled(self, other: Self, _scale: Self) -> bool {
                self == other
            }
        }
    };
}

impl_field_ratio!(i64);
impl_field_ratio!(i128);

/// Floating point scalar for grids, samples and solvers.
///
/// Note that `Float` and `Signed` (through `FftNum`) both provide `abs` and
/// `signum`; generic code calls them as `Float::abs(x)`.
pub trait Real:
    Float
    + FloatConst
    + FftNum
    + Field
    + Sum
    + Default
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("f64 literal must convert")
    }

    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Machine epsilon of the type.
    fn eps() -> Self {
        Float::epsilon()
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn of_usize<T: Real>(n: usize) -> T {
    T::from_usize_exact(n)
}
