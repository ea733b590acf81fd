//! Scalar abstraction shared by the closed-form theory modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar the eigenframework is evaluated in: `f32` or `f64`.
///
/// Everything transcendental in the theory (powers, logs, `sin(π/α)`) rules
/// out exact rational arithmetic, so the bound stops at real floats.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Default relative residual for the implicit-constant solvers.
    fn default_tolerance() -> Self {
        let floor = Self::epsilon() * Self::lit(64.0);
        let target = Self::lit(1e-10);
        if floor > target {
            floor
        } else {
            target
        }
    }

    /// Converts an `f64` literal. Panics only for values no float can hold.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Neumaier compensated accumulator. Long eigensums (10⁶ modes and more)
/// lose several digits with naive summation, especially in `f32`.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Accumulator<T> {
    sum: T,
    carry: T,
}

impl<T: Scalar> Accumulator<T> {
    pub(crate) fn new() -> Self {
        Self {
            sum: T::zero(),
            carry: T::zero(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, x: T) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry = self.carry + ((self.sum - t) + x);
        } else {
            self.carry = self.carry + ((x - t) + self.sum);
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> T {
        self.sum + self.carry
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut acc = Accumulator::<f64>::new();
        acc.add(1.0);
        for _ in 0..10_000 {
            acc.add(1e-16);
        }
        assert!((acc.value() - (1.0 + 1e-12)).abs() < 1e-20);
    }

    #[test]
    fn tolerance_respects_precision() {
        assert_eq!(f64::default_tolerance(), 1e-10);
        assert!(f32::default_tolerance() > 1e-6);
    }
}
