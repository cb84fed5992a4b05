//! Small descriptive-statistics helpers.

use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    Some(xs.iter().copied().sum::<T>() / T::of(xs.len() as f64))
}

/// Population variance (divides by `n`).
pub fn population_variance<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some(ss / T::of(xs.len() as f64))
}

pub fn population_std<T: Scalar>(xs: &[T]) -> Option<T> {
    population_variance(xs).map(Float::sqrt)
}

/// Unbiased sample variance (divides by `n - 1`).
pub fn sample_variance<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs)?;
    let ss: T = xs.iter().map(|&x| (x - m) * (x - m)).sum();
    Some(ss / T::of((xs.len() - 1) as f64))
}

/// `sigma / mu` with the population standard deviation. `None` when the
/// mean is zero or the slice is empty.
pub fn coefficient_of_variation<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    if m == T::zero() {
        return None;
    }
    Some(population_std(xs)? / m.abs())
}

/// Linearly interpolated percentile, `q` in `[0, 100]`.
pub fn percentile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() || !(0.0..=100.0).contains(&q) {
        return None;
    }
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    Some(v[lo] + (v[hi] - v[lo]) * t)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    percentile(xs, 50.0)
}

use num_traits::Float;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cv_of_one_to_four() {
        let cv = coefficient_of_variation(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((cv - 1.25f64.sqrt() / 2.5).abs() < 1e-15);
        let cv32 = coefficient_of_variation(&[1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert!((cv32 - 0.447_213_6).abs() < 1e-6);
    }

    #[test]
    fn zero_mean_has_no_cv() {
        assert!(coefficient_of_variation(&[0.0, 0.0]).is_none());
        assert!(coefficient_of_variation::<f64>(&[]).is_none());
    }

    #[test]
    fn percentiles() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile(&xs, 0.0), Some(1.0));
        assert_eq!(percentile(&xs, 100.0), Some(4.0));
        assert_eq!(median(&xs), Some(2.5));
    }
}
