//! Regression metrics pooled over every sample and output.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    /// Percent.
    pub mape: f64,
    pub mse: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(flatten)]
    pub pooled: Scores,
    /// One entry per output column.
    pub per_output: Vec<Scores>,
}

fn check_shapes<T>(actual: &ArrayView2<T>, predicted: &ArrayView2<T>) -> Result<()> {
    if actual.dim() != predicted.dim() {
        return Err(Error::invalid(format!("shape mismatch: {:?} vs {:?}", actual.dim(), predicted.dim())));
    }
    if actual.is_empty() {
        return Err(Error::invalid("metrics need at least one value"));
    }
    Ok(())
}

/// Mean absolute percentage error over all entries, in percent.
pub fn mape<T: Scalar>(actual: ArrayView2<T>, predicted: ArrayView2<T>) -> Result<T> {
    check_shapes(&actual, &predicted)?;
    let mut acc = T::zero();
    for ((i, j), &y) in actual.indexed_iter() {
        if y == T::zero() {
            return Err(Error::ZeroActual { row: i, output: j });
        }
        acc += ((y - predicted[[i, j]]) / y).abs();
    }
    Ok(T::of(100.0) * acc / T::of(actual.len() as f64))
}

pub fn mse<T: Scalar>(actual: ArrayView2<T>, predicted: ArrayView2<T>) -> Result<T> {
    check_shapes(&actual, &predicted)?;
    let acc: T = actual.iter().zip(predicted.iter()).map(|(&y, &p)| (y - p) * (y - p)).sum();
    Ok(acc / T::of(actual.len() as f64))
}

/// One minus residual over total sum of squares, each output centred on
/// its own mean. A constant column makes the denominator zero and the
/// result non-finite.
pub fn r2<T: Scalar>(actual: ArrayView2<T>, predicted: ArrayView2<T>) -> Result<T> {
    check_shapes(&actual, &predicted)?;
    let n = T::of(actual.nrows() as f64);
    let mut ss_res = T::zero();
    let mut ss_tot = T::zero();
    for (ycol, pcol) in actual.columns().into_iter().zip(predicted.columns()) {
        let mean = ycol.iter().copied().sum::<T>() / n;
        for (&y, &p) in ycol.iter().zip(pcol.iter()) {
            ss_res += (y - p) * (y - p);
            ss_tot += (y - mean) * (y - mean);
        }
    }
    Ok(T::one() - ss_res / ss_tot)
}

pub fn scores<T: Scalar>(actual: ArrayView2<T>, predicted: ArrayView2<T>) -> Result<Scores> {
    Ok(Scores {
        mape: mape(actual, predicted)?.to_f64_lossy(),
        mse: mse(actual, predicted)?.to_f64_lossy(),
        r2: r2(actual, predicted)?.to_f64_lossy(),
    })
}

pub fn evaluate_matrices<T: Scalar>(actual: ArrayView2<T>, predicted: ArrayView2<T>) -> Result<Metrics> {
    let pooled = scores(actual, predicted)?;
    let mut per_output = Vec::with_capacity(actual.ncols());
    for j in 0..actual.ncols() {
        let a = actual.slice(ndarray::s![.., j..j + 1]);
        let p = predicted.slice(ndarray::s![.., j..j + 1]);
        per_output.push(scores(a, p).map_err(|e| match e {
            Error::ZeroActual { row, .. } => Error::ZeroActual { row, output: j },
            other => other,
        })?);
    }
    Ok(Metrics { pooled, per_output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Axis};

    #[test]
    fn hundred_vs_ninety() {
        let y = array![[100.0]];
        let p = array![[90.0]];
        assert_eq!(mape(y.view(), p.view()).unwrap(), 10.0);
        assert_eq!(mse(y.view(), p.view()).unwrap(), 100.0);
    }

    #[test]
    fn perfect_prediction() {
        let y = array![[1.0, 2.0], [3.0, 5.0], [4.0, 1.0]];
        let s = scores(y.view(), y.view()).unwrap();
        assert_eq!((s.mape, s.mse, s.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn column_mean_predictor_has_zero_r2() {
        let y = array![[1.0, 2.0], [3.0, 5.0], [5.0, 2.0]];
        let m = y.mean_axis(Axis(0)).unwrap();
        let p = Array2::from_shape_fn(y.dim(), |(_, j)| m[j]);
        assert_eq!(r2(y.view(), p.view()).unwrap(), 0.0);
    }

    #[test]
    fn zero_actual_names_its_cell() {
        let y = array![[1.0, 2.0], [3.0, 0.0]];
        match evaluate_matrices(y.view(), y.view()) {
            Err(Error::ZeroActual { row, output }) => assert_eq!((row, output), (1, 1)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn single_precision_agrees() {
        let y = array![[1.0f32, 2.0], [3.0, 4.0]];
        let p = array![[1.5f32, 2.0], [2.0, 4.5]];
        assert!((mse(y.view(), p.view()).unwrap() - 0.375).abs() < 1e-7);
    }
}
