//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Everything geometric is written against [`Scalar`] so the same code runs on
//! `f32` and `f64`. Integer-valued measures (Hamming, edit) still report their
//! values through the scalar type; they are exact for any length that fits in
//! the mantissa.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Absolute tolerance used for real-valued comparisons.
    const ABS_TOL: f64;
    /// Relative tolerance used for real-valued comparisons.
    const REL_TOL: f64;

    /// Converts an `f64` literal. Never fails for finite input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits a float")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Tolerance for comparing quantities of magnitude `scale`.
    #[inline]
    fn tol(scale: Self) -> Self {
        Self::lit(Self::ABS_TOL) + Self::lit(Self::REL_TOL) * scale.abs()
    }

    /// `a <= b` up to [`Scalar::tol`].
    #[inline]
    fn approx_le(a: Self, b: Self) -> bool {
        a <= b + Self::tol(a.abs().max(b.abs()))
    }

    /// `a == b` up to [`Scalar::tol`].
    #[inline]
    fn approx_eq(a: Self, b: Self) -> bool {
        (a - b).abs() <= Self::tol(a.abs().max(b.abs()))
    }
}

impl Scalar for f64 {
    const ABS_TOL: f64 = 1e-9;
    const REL_TOL: f64 = 1e-12;
}

impl Scalar for f32 {
    const ABS_TOL: f64 = 1e-5;
    const REL_TOL: f64 = 1e-6;
}

/// Orders two scalars, treating NaN as equal. Distances never produce NaN for
/// valid input so this only matters for sort stability.
#[inline]
pub(crate) fn cmp<S: Scalar>(a: S, b: S) -> std::cmp::Ordering {
    a.partial_cmp(&b).unwrap_or(std::cmp::Ordering::Equal)
}
