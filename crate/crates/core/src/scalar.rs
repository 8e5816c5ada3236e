use core::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar the numeric pipeline is generic over: `f32` or `f64`.
///
/// Storage-heavy stages (residuals, fingerprints) usually run at `f32`;
/// accumulations inside the kernels are carried in `f64` regardless.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + Send
    + Sync
    + std::fmt::Debug
    + std::fmt::Display
    + 'static
{
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is convertible to a Real scalar")
    }

    fn as_f64(self) -> f64 {
        <Self as ToPrimitive>::to_f64(&self).expect("Real scalar is convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}
