//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra as na;
use num_traits as nt;

/// Floating-point scalar the filters, Riccati integrator and estimators are generic over.
///
/// Implemented for `f32` and `f64`. Summation helpers rely on IEEE-754 round-to-nearest
/// arithmetic, so exotic `RealField` implementors are deliberately not covered.
pub trait Real:
    Copy + na::RealField + nt::FromPrimitive + nt::ToPrimitive + Send + Sync + 'static
{
    /// Converts an `f64` literal into the scalar type.
    fn lit(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        <Self as nt::ToPrimitive>::to_f64(&self).unwrap_or(f64::NAN)
    }

    fn count(n: usize) -> Self {
        <Self as nt::FromPrimitive>::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}
