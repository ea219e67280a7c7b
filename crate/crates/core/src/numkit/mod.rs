//! Dense numerics shared by every other module.

mod gaussian;
mod matrix;
mod rng;

pub use gaussian::{
    cholesky_psd, default_ridge, gaussian_sample, random_orthogonal, random_rotation, Cholesky,
    GaussianParams, MAX_RIDGE_ESCALATIONS,
};
pub use matrix::Matrix;
pub use rng::SeededRng;

use crate::{Error, Result};

/// `log(sum(exp(v)))` with a max shift.
///
/// `-inf` entries are allowed and contribute zero mass; an all `-inf` input
/// returns `-inf`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyReduction);
    }
    Ok(lse_unchecked(values))
}

pub(crate) fn lse_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalized probabilities from unnormalized log weights.
pub fn softmax_from_logs(log_weights: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_weights)?;
    if !lse.is_finite() {
        return Err(Error::NonFinite("softmax normalizer".into()));
    }
    Ok(log_weights.iter().map(|v| (v - lse).exp()).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean distance, the ground cost used throughout.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lse_of_equal_entries() {
        let v = log_sum_exp(&[0.0, 0.0]).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn lse_single_is_identity() {
        for x in [-3.5, 0.0, 17.25, 1e300, -1e300] {
            assert_eq!(log_sum_exp(&[x]).unwrap(), x);
        }
    }

    #[test]
    fn lse_large_values_do_not_overflow() {
        // 1000 + ln 2, computed independently: exp(-1000) terms vanish.
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
        let v = log_sum_exp(&[1e300, 1e300]).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn lse_empty_is_error() {
        assert!(matches!(log_sum_exp(&[]), Err(Error::EmptyReduction)));
    }

    #[test]
    fn lse_handles_negative_infinity() {
        let v = log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]).unwrap(), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn lse_bounds(v in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let l = log_sum_exp(&v).unwrap();
            prop_assert!(l >= m);
            prop_assert!(l <= m + (v.len() as f64).ln() + 1e-9 * m.abs().max(1.0));
        }
    }
}
