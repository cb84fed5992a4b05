//! Full multivariate polynomial regression.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{center, lstsq};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyConfig {
    pub degree: usize,
}

impl Default for PolyConfig {
    fn default() -> Self {
        PolyConfig { degree: 5 }
    }
}

/// Every exponent vector over `dim` variables with total degree in
/// `1..=degree`, ordered by degree then lexicographically.
pub fn monomials(dim: usize, degree: usize) -> Vec<Vec<u8>> {
    fn rec(dim: usize, left: usize, prefix: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
        if prefix.len() == dim - 1 {
            prefix.push(left as u8);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=left).rev() {
            prefix.push(e as u8);
            rec(dim, left - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    for d in 1..=degree {
        rec(dim, d, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// Number of monomials of total degree `1..=degree` in `dim` variables.
pub fn feature_count(dim: usize, degree: usize) -> usize {
    // C(dim + degree, degree) - 1
    let mut c: u128 = 1;
    for k in 1..=degree as u128 {
        c = c * (dim as u128 + k) / k;
    }
    (c - 1) as usize
}

pub fn expand(x: ArrayView2<f64>, exponents: &[Vec<u8>]) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), exponents.len()));
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        for (j, e) in exponents.iter().enumerate() {
            let mut v = 1.0;
            for (k, &p) in e.iter().enumerate() {
                if p > 0 {
                    v *= row[k].powi(p as i32);
                }
            }
            out[[i, j]] = v;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyModel {
    pub degree: usize,
    pub exponents: Vec<Vec<u8>>,
    /// Per-feature divisor applied before the solve.
    pub scale: Vec<f64>,
    pub coef: Array2<f64>,
    pub intercept: Array1<f64>,
    /// Numerical rank of the scaled design.
    pub rank: usize,
}

/// Relative singular-value cutoff for the least-squares solve.
pub const RCOND: f64 = 1e-13;

pub fn fit_poly(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &PolyConfig) -> Result<PolyModel> {
    if cfg.degree == 0 {
        return Err(Error::invalid("polynomial degree must be >= 1"));
    }
    let exponents = monomials(x.ncols(), cfg.degree);
    let mut phi = expand(x, &exponents);
    let scale: Vec<f64> = phi
        .axis_iter(Axis(1))
        .map(|c| {
            let s = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if s > 0.0 && s.is_finite() {
                s
            } else {
                1.0
            }
        })
        .collect();
    for (mut c, s) in phi.axis_iter_mut(Axis(1)).zip(&scale) {
        c /= *s;
    }
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular {
            what: format!("degree-{} design overflowed", cfg.degree),
            condition: f64::INFINITY,
        });
    }
    let (pm, pc) = center(phi.view());
    let (ym, yc) = center(y);
    let (coef, rank, _) = lstsq(pc.view(), yc.view(), RCOND)?;
    let intercept = &ym - &pm.dot(&coef);
    Ok(PolyModel {
        degree: cfg.degree,
        exponents,
        scale,
        coef,
        intercept,
        rank,
    })
}

impl PolyModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut phi = expand(x, &self.exponents);
        for (mut c, s) in phi.axis_iter_mut(Axis(1)).zip(&self.scale) {
            c /= *s;
        }
        phi.dot(&self.coef) + &self.intercept
    }
}
