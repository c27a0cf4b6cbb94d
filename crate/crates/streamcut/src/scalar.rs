//! Scalar abstraction: all score and loss math is generic over the
//! floating-point type.

use std::fmt;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar usable throughout the crate (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum<Self> + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    /// Lossless conversion from `usize` counts; counts in this crate stay
    /// far below the mantissa limit of either float width.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable as scalar")
    }

    /// Shorthand for converting literal constants.
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("constant representable as scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_conversion_is_exact_for_table_sizes() {
        // largest pair count we ever index: N = 4096 frames
        let n = 4096usize * 4095 / 2;
        assert_eq!(f64::from_count(n) as usize, n);
    }
}
