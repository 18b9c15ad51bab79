//! Numeric abstraction for the estimator math.
//!
//! The leverage pipeline, the closed-form linear estimator, the modulation
//! loop and the baseline folds only need field arithmetic, ordering and an
//! absolute value. They are written against [`Scalar`] so the same code runs
//! on `f64` in production and on exact rationals in tests, where golden values
//! can be compared without any tolerance.

use std::fmt::{Debug, Display};

use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Ordered field with an absolute value: `f32`, `f64`, `Ratio<i64>`, `BigRational`.
pub trait Scalar: Num + Signed + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Display {
    /// Converts a count. Counts are always representable in the supported types.
    fn from_count(n: u64) -> Self {
        Self::from_u64(n).expect("count representable as scalar")
    }

    /// Converts a configuration constant. Rationals take the exact binary value.
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(Self::zero)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
}

impl<T> Scalar for T where T: Num + Signed + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug + Display {}

/// Neumaier-compensated running sum.
///
/// For exact scalar types the compensation term stays zero.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> Default for CompensatedSum<T> {
    fn default() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn from_value(value: T) -> Self {
        Self {
            sum: value,
            comp: T::zero(),
        }
    }

    pub fn add(&mut self, x: T) {
        let t = self.sum.clone() + x.clone();
        if self.sum.abs() >= x.abs() {
            self.comp = self.comp.clone() + ((self.sum.clone() - t.clone()) + x);
        } else {
            self.comp = self.comp.clone() + ((x - t.clone()) + self.sum.clone());
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum.clone());
        self.add(other.comp.clone());
    }

    pub fn value(&self) -> T {
        self.sum.clone() + self.comp.clone()
    }
}
