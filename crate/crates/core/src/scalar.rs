//! Scalar abstraction shared by the numeric kernels.
//!
//! The one-step estimator formulas, the simplex projection and the discrete
//! enumeration oracle are written against [`Scalar`] so they run unchanged in
//! `f32` or `f64`. Learners and data handling are `f64` throughout.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal; panics only for non-representable values,
    /// which cannot happen for the finite constants used in this crate.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::infinity)
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
}

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().copied().sum::<T>() / T::from_usize_lossy(xs.len())
}

/// Probability-weighted mean; weights need not be normalized.
pub fn weighted_mean<T: Scalar>(xs: &[T], weights: &[T]) -> T {
    let total: T = weights.iter().copied().sum();
    xs.iter()
        .zip(weights)
        .map(|(&x, &w)| x * w)
        .sum::<T>()
        / total
}

/// Sample variance with the `n - 1` denominator (0 for fewer than two values).
pub fn sample_variance<T: Scalar>(xs: &[T]) -> T {
    if xs.len() < 2 {
        return T::zero();
    }
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / T::from_usize_lossy(xs.len() - 1)
}

pub fn expit<T: Scalar>(eta: T) -> T {
    if eta >= T::zero() {
        T::one() / (T::one() + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (T::one() + e)
    }
}

pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expit_is_symmetric_and_stable() {
        assert_eq!(expit(0.0_f64), 0.5);
        assert!((expit(3.0_f64) + expit(-3.0_f64) - 1.0).abs() < 1e-15);
        assert!(expit(-800.0_f64) >= 0.0);
        assert!(expit(800.0_f32) <= 1.0);
        assert!((logit(expit(1.25_f64)) - 1.25).abs() < 1e-12);
    }

    #[test]
    fn variance_matches_hand_computation() {
        let v = sample_variance(&[1.0_f64, 2.0, 3.0, 4.0]);
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_variance(&[2.0_f32]), 0.0);
        assert!((weighted_mean(&[1.0_f64, 3.0], &[3.0, 1.0]) - 1.5).abs() < 1e-15);
    }
}
