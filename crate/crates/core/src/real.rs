//! Scalar abstraction over the two precisions the lab runs at.
//!
//! Training runs in `f32`; gradient-verification tests instantiate the same
//! code at `f64` because finite-difference checks are meaningless in single
//! precision.

use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point element type for tensors and graphs.
pub trait Real:
    num_traits::Float
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, for schedule coefficients and constants.
    fn from_f64(v: f64) -> Self;

    /// Exact widening to `f64`, for reporting and mixed-precision reductions.
    fn as_f64(self) -> f64;

    /// One standard-normal draw. All lab code draws in `f64` and casts, so a
    /// given seed yields the same underlying stream at either precision.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_f64(rng.sample::<f64, _>(StandardNormal))
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}
