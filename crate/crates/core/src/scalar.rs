//! Scalar abstraction for the numeric stack.

use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Floating-point scalar the metrics, losses and network kernels are generic
/// over. The pipeline instantiates f32; tests use f64 where finite
/// differences need the headroom.
///
/// The conversion methods are named so they cannot collide with the
/// Option-returning ones from `num_traits`.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn of_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn of_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn of_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Shorthand for lifting an f64 constant into the working scalar type.
#[inline]
pub fn real<T: Real>(v: f64) -> T {
    T::of(v)
}
