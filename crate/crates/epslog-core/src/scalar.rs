//! Scalar abstraction for the numerical kernels.
//!
//! Every routine in this crate is generic over a floating-point scalar so the
//! same code runs in `f32` and `f64`. The [`Real`] trait bundles the numeric
//! behaviour the kernels rely on (transcendentals, assignment operators,
//! conversions, printing) and is implemented for exactly those two types;
//! concrete `f64` aliases for the public data types live at the crate root.
//!
//! Numerical notes
//! ---------------
//! Random normal draws are always generated in `f64` and converted with
//! [`Real::from_f64`]. This keeps the underlying random stream identical
//! across scalar types, so an `f32` run consumes exactly the same variates as
//! the corresponding `f64` run and differs only by rounding.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable by all kernels in this crate.
///
/// The supertraits supply, in order: ergonomic copy semantics, printing for
/// reports, `+=`-style accumulation, the transcendental functions and
/// IEEE-754 queries of [`Float`], mathematical constants, and lossless-enough
/// conversions from primitive types for literals and counters.
pub trait Real:
    'static
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + LowerExp
    + Default
    + PartialOrd
    + NumAssign
    + Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
{
    /// Machine epsilon of the concrete type (2⁻²³ for `f32`, 2⁻⁵² for `f64`).
    const EPS: Self;
}

impl Real for f32 {
    const EPS: Self = f32::EPSILON;
}

impl Real for f64 {
    const EPS: Self = f64::EPSILON;
}

/// Converts an `f64` literal into the working scalar type.
///
/// Intended for compile-time constants appearing in formulas (`lit(0.5)`,
/// `lit(2.0)` …); the conversion is total for finite literals and panics only
/// on values outside the target type's range, which no constant in this crate
/// approaches.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in the scalar type")
}

/// Converts a count into the working scalar type.
///
/// Ensemble sizes and grid lengths stay far below 2⁵³, so the conversion is
/// exact in `f64`; in `f32` it rounds once, which is the precision the caller
/// asked for.
#[inline]
pub fn from_count<T: Real>(n: usize) -> T {
    T::from_usize(n).expect("count representable in the scalar type")
}
