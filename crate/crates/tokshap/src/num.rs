//! Scalar abstraction for the numeric core.
//!
//! Everything numeric in this crate (estimators, solvers, metrics, the
//! surrogate model) is generic over [`Scalar`] so the same code runs in
//! `f32` or `f64`. File formats always store `f64`; conversion happens at
//! the I/O boundary.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use num_traits::NumAssign;

/// Floating-point scalar usable by the estimators and the surrogate model.
pub trait Scalar: Float + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static {
    /// Narrowing conversion from `f64` (identity for `f64`).
    fn from_f64(v: f64) -> Self;

    /// Exact widening to `f64` (identity for `f64`).
    fn as_f64(self) -> f64;

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
