use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive};

/// Floating point element type of the numeric kernels: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + Debug + Display + FromStr + Default + Sum + Send + Sync + 'static
{
    /// Relative off-diagonal threshold for the Jacobi SVD sweeps.
    fn jacobi_tolerance() -> Self;

    fn from_f64_lossy(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f64 {
    fn jacobi_tolerance() -> Self {
        1e-10
    }

    fn from_f64_lossy(v: f64) -> Self {
        v
    }

    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Scalar for f32 {
    // 1e-10 is below f32 resolution; a few ulps is the best achievable.
    fn jacobi_tolerance() -> Self {
        4.0 * f32::EPSILON
    }

    fn from_f64_lossy(v: f64) -> Self {
        v as f32
    }

    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}
