//! Floating-point scalar abstraction shared by every numeric module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the models are generic over: `f32` or `f64`.
///
/// Gradient checks and oracle comparisons assume `f64`; `f32` is supported for
/// inference and storage-sized experiments.
pub trait Scalar:
    NdFloat + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + LowerExp + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Max-shifted `log(sum(exp(x)))`. Returns `-inf` for an empty slice or when
/// every entry is `-inf`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
