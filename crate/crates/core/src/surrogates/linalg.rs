//! Conversions between ndarray and nalgebra plus the dense solves shared by
//! the linear families.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub(crate) fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Column means and the centred copy.
pub(crate) fn center(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let mean = a.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(a.ncols()));
    let centred = &a - &mean;
    (mean, centred)
}

/// Solves `(X^T X + lambda I) W = X^T Y` by Cholesky.
pub(crate) fn ridge_solve(x: ArrayView2<f64>, y: ArrayView2<f64>, lambda: f64, what: &str) -> Result<Array2<f64>> {
    let xm = to_na(x);
    let mut gram = xm.transpose() * &xm;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = xm.transpose() * to_na(y);
    let chol = gram.clone().cholesky().ok_or_else(|| Error::Singular {
        what: what.to_string(),
        condition: condition_estimate(&gram),
    })?;
    Ok(from_na(&chol.solve(&rhs)))
}

/// Ratio of extreme singular values.
pub(crate) fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Least squares through a thin QR followed by an SVD of the triangular
/// factor. Singular values below `rcond * s_max` are dropped (minimum-norm
/// solution); returns the solution and the retained rank.
pub(crate) fn lstsq(x: ArrayView2<f64>, y: ArrayView2<f64>, rcond: f64) -> Result<(Array2<f64>, usize, f64)> {
    let xm = to_na(x);
    let ym = to_na(y);
    let (qty, r) = if xm.nrows() >= xm.ncols() {
        let qr = xm.qr();
        (qr.q().transpose() * ym, qr.r())
    } else {
        (ym, xm)
    };
    let svd = r.svd(true, true);
    let smax = svd.singular_values.max();
    if !smax.is_finite() {
        return Err(Error::Singular {
            what: "least squares (non-finite design)".into(),
            condition: f64::INFINITY,
        });
    }
    let cutoff = rcond * smax;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut uty = u.transpose() * qty;
    let mut rank = 0;
    let mut smin = smax;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            smin = smin.min(s);
            let mut row = uty.row_mut(k);
            row /= s;
        } else {
            uty.row_mut(k).fill(0.0);
        }
    }
    let w = vt.transpose() * uty;
    Ok((from_na(&w), rank, if smin > 0.0 { smax / smin } else { f64::INFINITY }))
}
