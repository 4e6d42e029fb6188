//! Floating point scalar abstraction shared by every module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, NumCast};

/// Real scalar type. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    #[inline]
    fn c(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("f64 literal must be representable")
    }

    /// Converts a count or index.
    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as NumCast>::from(v).expect("usize must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Formats a value with 17 significant digits (round-trips an `f64`).
pub fn fmt17<T: Scalar>(v: T) -> String {
    let x = v.as_f64();
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{:.16e}", x)
    }
}

/// Formats a vector as `[a,b,...]` with [`fmt17`] entries.
pub fn fmt_vec17<T: Scalar>(v: &[T]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt17(x)).collect();
    format!("[{}]", parts.join(","))
}

/// Parses a value written by [`fmt17`].
pub fn parse_scalar<T: Scalar>(s: &str) -> Option<T> {
    let t = s.trim();
    let x: f64 = match t {
        "NaN" => f64::NAN,
        "inf" => f64::INFINITY,
        "-inf" => f64::NEG_INFINITY,
        _ => t.parse().ok()?,
    };
    <T as NumCast>::from(x)
}
