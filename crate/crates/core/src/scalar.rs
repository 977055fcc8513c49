//! Floating-point scalar abstraction shared by the oracle, the network and
//! the agents.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// f32 or f64.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from f64; used for constants and dataset values.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is representable")
    }

    /// Conversion to f64 for serialization and reporting.
    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("scalar converts to f64")
    }

    /// Conversion from a count.
    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Index of the largest element, lowest index on ties.
///
/// NaN entries are never selected unless every entry is NaN, in which case
/// index 0 is returned.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    let mut best_val = T::neg_infinity();
    for (i, &v) in values.iter().enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

/// Largest element; `-inf` for an empty slice.
pub fn max<T: Scalar>(values: &[T]) -> T {
    values.iter().fold(T::neg_infinity(), |m, &v| m.max(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0f32, 2.0]), 0);
        assert_eq!(argmax(&[f64::NAN, 1.0]), 1);
    }
}
