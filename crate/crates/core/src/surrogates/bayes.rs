//! Bayesian linear regression over a polynomial basis with an isotropic
//! Gaussian prior. The posterior is computed from one symmetric
//! eigendecomposition of the Gram matrix, which also serves the optional
//! evidence re-estimation of the prior precision and noise variance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::linalg::{center, from_na, to_na};
use super::poly::{expand, monomials};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    /// Prior precision of the weights.
    pub alpha: f64,
    pub noise_variance: f64,
    /// Re-estimate `alpha` and `noise_variance` per output by evidence
    /// maximization, starting from the values above.
    pub evidence: bool,
    pub max_iter: usize,
    /// Degree of the polynomial basis (1 = plain linear features).
    pub degree: usize,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            alpha: 1.0,
            noise_variance: 1.0,
            evidence: false,
            max_iter: 300,
            degree: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesModel {
    pub exponents: Vec<Vec<u8>>,
    pub feature_mean: Array1<f64>,
    pub coef: Array2<f64>,
    pub intercept: Array1<f64>,
    pub alpha: Vec<f64>,
    pub noise_variance: Vec<f64>,
    /// Posterior covariance of the weights, one matrix per output.
    pub covariance: Vec<Array2<f64>>,
}

pub fn fit_bayes(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &BayesConfig) -> Result<BayesModel> {
    if !(cfg.alpha > 0.0 && cfg.noise_variance > 0.0) {
        return Err(Error::invalid("alpha and noise_variance must be > 0"));
    }
    if cfg.degree == 0 {
        return Err(Error::invalid("basis degree must be >= 1"));
    }
    let exponents = monomials(x.ncols(), cfg.degree);
    let phi = expand(x, &exponents);
    let (feature_mean, pc) = center(phi.view());
    let (ym, yc) = center(y);
    let p = pc.ncols();
    let n = pc.nrows() as f64;

    let pm = to_na(pc.view());
    let gram = pm.transpose() * &pm;
    let eig = SymmetricEigen::new(gram);
    let q = &eig.eigenvectors;
    let e: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();

    let mut coef = Array2::zeros((p, y.ncols()));
    let mut alphas = Vec::new();
    let mut noises = Vec::new();
    let mut covariance = Vec::new();
    for (k, ycol) in yc.axis_iter(Axis(1)).enumerate() {
        let t = DVector::from_iterator(ycol.len(), ycol.iter().copied());
        // Projection of the targets onto the eigenbasis.
        let qpy = q.transpose() * (pm.transpose() * &t);
        let mut alpha = cfg.alpha;
        let mut beta = 1.0 / cfg.noise_variance;
        let posterior_mean = |alpha: f64, beta: f64| -> DVector<f64> {
            let scaled = DVector::from_iterator(p, (0..p).map(|i| beta * qpy[i] / (alpha + beta * e[i])));
            q * scaled
        };
        let mut m = posterior_mean(alpha, beta);
        if cfg.evidence {
            let mut converged = false;
            for _ in 0..cfg.max_iter {
                let gamma: f64 = e.iter().map(|&ei| beta * ei / (alpha + beta * ei)).sum();
                let resid = &t - &pm * &m;
                let new_alpha = gamma / m.norm_squared().max(1e-300);
                let new_beta = (n - gamma).max(1e-12) / resid.norm_squared().max(1e-300);
                let done = ((new_alpha - alpha) / alpha).abs() < 1e-10 && ((new_beta - beta) / beta).abs() < 1e-10;
                alpha = new_alpha;
                beta = new_beta;
                m = posterior_mean(alpha, beta);
                if done {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NotConverged {
                    what: "evidence re-estimation".into(),
                    iterations: cfg.max_iter,
                    residual: 1.0 / beta,
                });
            }
        }
        let s = q * DMatrix::from_diagonal(&DVector::from_iterator(p, e.iter().map(|&ei| 1.0 / (alpha + beta * ei)))) * q.transpose();
        coef.column_mut(k).assign(&Array1::from_iter(m.iter().copied()));
        alphas.push(alpha);
        noises.push(1.0 / beta);
        covariance.push(from_na(&s));
    }
    let intercept = &ym - &feature_mean.dot(&coef);
    Ok(BayesModel {
        exponents,
        feature_mean,
        coef,
        intercept,
        alpha: alphas,
        noise_variance: noises,
        covariance,
    })
}

impl BayesModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        expand(x, &self.exponents).dot(&self.coef) + &self.intercept
    }

    /// Posterior predictive variance per row and output: noise plus weight
    /// uncertainty.
    pub fn predictive_variance(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let phi = expand(x, &self.exponents) - &self.feature_mean;
        let mut out = Array2::zeros((x.nrows(), self.coef.ncols()));
        for (k, s) in self.covariance.iter().enumerate() {
            let sp = phi.dot(s);
            for i in 0..phi.nrows() {
                out[[i, k]] = self.noise_variance[k] + phi.row(i).dot(&sp.row(i));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    #[test]
    fn evidence_finds_the_noise_level() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let n = 4000;
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-1.0..1.0));
        let noise = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let y = x.map_axis(Axis(1), |r| 0.7 * r[0] - 0.2 * r[1] + rng.sample(noise)).insert_axis(Axis(1));
        let cfg = BayesConfig {
            evidence: true,
            degree: 1,
            ..Default::default()
        };
        let m = fit_bayes(x.view(), y.view(), &cfg).unwrap();
        assert!((m.noise_variance[0] - 0.01).abs() < 0.001, "{}", m.noise_variance[0]);
        assert!((m.coef[[0, 0]] - 0.7).abs() < 0.01);
    }

    #[test]
    fn predictive_variance_exceeds_noise_and_grows_off_data() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
        let x = Array2::from_shape_fn((50, 1), |_| rng.gen_range(-1.0..1.0));
        let y = x.mapv(|v| 2.0 * v);
        let m = fit_bayes(x.view(), y.view(), &BayesConfig { degree: 1, noise_variance: 0.5, ..Default::default() }).unwrap();
        let probe = ndarray::array![[0.0], [10.0]];
        let v = m.predictive_variance(probe.view());
        assert!(v[[0, 0]] >= 0.5);
        assert!(v[[1, 0]] > v[[0, 0]]);
    }
}
