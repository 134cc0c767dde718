//! Scalar abstraction: the numeric element type used across the crate.
//!
//! All math is written against [`Scalar`] so the same code runs on `f32`
//! and `f64`. The crate-root aliases pin the shipped precision to `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point element type for point clouds, transforms and tensors.
pub trait Scalar:
    Float + NumAssign + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Tolerance used when validating rotation orthonormality.
    fn rotation_tol() -> Self;
}

impl Scalar for f32 {
    fn rotation_tol() -> Self {
        1e-4
    }
}

impl Scalar for f64 {
    fn rotation_tol() -> Self {
        1e-9
    }
}

/// Shorthand for converting an `f64` constant into the working scalar type.
#[inline]
pub fn cast<S: Scalar>(x: f64) -> S {
    S::from_f64(x).expect("finite f64 constant converts to scalar")
}
