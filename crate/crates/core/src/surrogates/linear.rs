//! Linear regression: ordinary least squares, ridge, lasso and elastic net.
//! Every output column is fitted independently on a shared design; the
//! intercept is never penalized.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{center, lstsq, ridge_solve};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularization {
    None,
    L1,
    L2,
    ElasticNet,
}

/// Penalties:
/// * `l2`: `||y - Xw||^2 + strength * ||w||^2`
/// * `l1` / `elastic_net`: `||y - Xw||^2 / (2n) + strength * (l1_ratio * ||w||_1 + (1 - l1_ratio) / 2 * ||w||^2)`
///   with `l1_ratio` forced to 1 for `l1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub regularization: Regularization,
    pub strength: f64,
    pub l1_ratio: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            regularization: Regularization::None,
            strength: 0.0,
            l1_ratio: 0.5,
            max_iter: 100_000,
            tol: 1e-10,
        }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::invalid("regularization strength must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.l1_ratio) {
            return Err(Error::invalid("l1_ratio must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    /// `features x outputs`.
    pub coef: Array2<f64>,
    pub intercept: Array1<f64>,
    /// Coordinate-descent sweeps used (0 for closed-form fits).
    pub iterations: usize,
}

impl LinearModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.coef) + &self.intercept
    }
}

/// Condition number above which an unregularized fit is reported singular.
const MAX_CONDITION: f64 = 1e12;

pub fn fit_linear(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &LinearConfig) -> Result<LinearModel> {
    cfg.validate()?;
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return Err(Error::invalid("design and targets need the same nonzero row count"));
    }
    let (xm, xc) = center(x);
    let (ym, yc) = center(y);
    let (coef, iterations) = match cfg.regularization {
        Regularization::None => {
            let (w, rank, cond) = lstsq(xc.view(), yc.view(), 0.0)?;
            if rank < xc.ncols() || cond > MAX_CONDITION {
                return Err(Error::Singular {
                    what: "ordinary least squares".into(),
                    condition: cond,
                });
            }
            (w, 0)
        }
        Regularization::L2 => (ridge_solve(xc.view(), yc.view(), cfg.strength, "ridge normal equations")?, 0),
        Regularization::L1 | Regularization::ElasticNet => {
            let ratio = if cfg.regularization == Regularization::L1 { 1.0 } else { cfg.l1_ratio };
            coordinate_descent(xc.view(), yc.view(), cfg.strength, ratio, cfg.max_iter, cfg.tol)?
        }
    };
    let intercept = &ym - &xm.dot(&coef);
    Ok(LinearModel {
        coef,
        intercept,
        iterations,
    })
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on centred data.
fn coordinate_descent(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    strength: f64,
    l1_ratio: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(Array2<f64>, usize)> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let l1 = n * strength * l1_ratio;
    let l2 = n * strength * (1.0 - l1_ratio);
    let sq: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.dot(&c)).collect();
    let mut coef = Array2::zeros((p, y.ncols()));
    let mut worst = 0;
    for (k, ycol) in y.axis_iter(Axis(1)).enumerate() {
        let mut w = vec![0.0; p];
        let mut r = ycol.to_owned();
        let mut converged = false;
        let mut it = 0;
        while it < max_iter {
            it += 1;
            let mut max_step: f64 = 0.0;
            let mut max_w: f64 = 0.0;
            for j in 0..p {
                if sq[j] == 0.0 {
                    continue;
                }
                let xj = x.column(j);
                let rho = xj.dot(&r) + sq[j] * w[j];
                let new = soft_threshold(rho, l1) / (sq[j] + l2);
                let d = new - w[j];
                if d != 0.0 {
                    r.scaled_add(-d, &xj);
                    w[j] = new;
                }
                max_step = max_step.max(d.abs());
                max_w = max_w.max(new.abs());
            }
            if max_step <= tol * max_w.max(1e-300) || max_step == 0.0 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NotConverged {
                what: "coordinate descent".into(),
                iterations: it,
                residual: r.dot(&r) / n,
            });
        }
        worst = worst.max(it);
        coef.column_mut(k).assign(&Array1::from(w));
    }
    Ok((coef, worst))
}
