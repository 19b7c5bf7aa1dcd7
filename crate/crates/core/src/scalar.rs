//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Real floating-point scalar: `f32` or `f64`.
///
/// Wire formats always carry 64-bit values, so every scalar must round-trip
/// through `f64` (exactly for both implementors).
pub trait Real:
    Float + FftNum + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Machine epsilon used to scale convergence thresholds.
    fn eps() -> Self {
        <Self as Float>::epsilon()
    }

    fn of(value: f64) -> Self {
        <Self as FromPrimitive>::from_f64(value).expect("f64 is representable in every Real")
    }

    fn of_usize(value: usize) -> Self {
        <Self as FromPrimitive>::from_usize(value).expect("usize is representable in every Real")
    }

    fn to_f64_lossless(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("Real values convert to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
