//! Epsilon-insensitive support vector regression with an RBF kernel,
//! trained by sequential minimal optimization on the dual (second-order
//! working-set selection). One machine per output column.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// RBF width: `k(a, b) = exp(-gamma * |a - b|^2)`.
    pub gamma: f64,
    pub epsilon: f64,
    /// Box constraint on the dual variables.
    pub c: f64,
    /// Stopping tolerance on the maximal KKT violation pair.
    pub tol: f64,
    pub max_iter: usize,
    /// Training rows beyond this count are subsampled.
    pub max_train_rows: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        SvrConfig {
            gamma: 0.2,
            epsilon: 0.1,
            c: 10.0,
            tol: 1e-4,
            max_iter: 50_000_000,
            max_train_rows: 4000,
        }
    }
}

impl SvrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.epsilon > 0.0 && self.c > 0.0 && self.tol > 0.0) {
            return Err(Error::invalid("SVR needs gamma, epsilon, C and tol > 0"));
        }
        if self.max_train_rows == 0 {
            return Err(Error::invalid("max_train_rows must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub gamma: f64,
    /// Rows that carry a nonzero dual coefficient for some output.
    pub support: Array2<f64>,
    /// `support x outputs`: difference of the paired dual variables.
    pub coef: Array2<f64>,
    pub rho: Array1<f64>,
    /// SMO iterations per output.
    pub iterations: Vec<usize>,
}

fn rbf(a: ArrayView1<f64>, b: ArrayView1<f64>, gamma: f64) -> f64 {
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d).exp()
}

pub fn kernel_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> Array2<f64> {
    let mut k = Array2::zeros((a.nrows(), b.nrows()));
    if b.nrows() == 0 {
        return k;
    }
    let cols = b.nrows();
    k.as_slice_mut().expect("standard layout").par_chunks_mut(cols).enumerate().for_each(|(i, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rbf(a.row(i), b.row(j), gamma);
        }
    });
    k
}

/// Dual solution of one machine.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// `2n` variables: the upper-tube multipliers then the lower-tube ones.
    pub beta: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

const TAU: f64 = 1e-12;

/// Solves `min 1/2 b'Qb + p'b` s.t. `sum y_t b_t = 0`, `0 <= b_t <= c` for
/// the doubled epsilon-SVR problem, with `Q_ts = y_t y_s K(t mod n, s mod n)`.
pub fn solve_dual(k: &Array2<f64>, z: ArrayView1<f64>, cfg: &SvrConfig) -> Result<DualSolution> {
    let n = z.len();
    let l = 2 * n;
    let c = cfg.c;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let kk = |s: usize, t: usize| k[[s % n, t % n]];
    let mut beta = vec![0.0; l];
    let mut grad: Vec<f64> = (0..l)
        .map(|t| if t < n { cfg.epsilon - z[t] } else { cfg.epsilon + z[t - n] })
        .collect();
    let mut iter = 0;
    loop {
        // First index: maximal violation.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if sign(t) > 0.0 {
                if beta[t] < c && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i = t;
                }
            } else if beta[t] > 0.0 && grad[t] >= gmax {
                gmax = grad[t];
                i = t;
            }
        }
        // Second index: largest second-order decrease.
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        if i != usize::MAX {
            let yi = sign(i);
            for t in 0..l {
                let yt = sign(t);
                let qit = yi * yt * kk(i, t);
                if yt > 0.0 {
                    if beta[t] > 0.0 {
                        let diff = gmax + grad[t];
                        gmax2 = gmax2.max(grad[t]);
                        if diff > 0.0 {
                            let quad = kk(i, i) + kk(t, t) - 2.0 * yi * qit;
                            let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                            if obj <= best {
                                best = obj;
                                j = t;
                            }
                        }
                    }
                } else if beta[t] < c {
                    let diff = gmax - grad[t];
                    gmax2 = gmax2.max(-grad[t]);
                    if diff > 0.0 {
                        let quad = kk(i, i) + kk(t, t) + 2.0 * yi * qit;
                        let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= best {
                            best = obj;
                            j = t;
                        }
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax + gmax2 < cfg.tol {
            break;
        }
        if iter >= cfg.max_iter {
            return Err(Error::NotConverged {
                what: "SMO".into(),
                iterations: iter,
                residual: gmax + gmax2,
            });
        }
        iter += 1;

        let (yi, yj) = (sign(i), sign(j));
        let qij = yi * yj * kk(i, j);
        let (old_i, old_j) = (beta[i], beta[j]);
        if yi != yj {
            let quad = (kk(i, i) + kk(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (kk(i, i) + kk(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = sum;
                }
                if beta[i] < 0.0 {
                    beta[i] = 0.0;
                    beta[j] = sum;
                }
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        if di != 0.0 || dj != 0.0 {
            for (t, g) in grad.iter_mut().enumerate() {
                let yt = sign(t);
                *g += yt * (yi * kk(i, t) * di + yj * kk(j, t) * dj);
            }
        }
    }

    // Offset: mean of y*G over free variables, else the midpoint of the
    // feasible interval.
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        let at_upper = beta[t] >= c;
        let at_lower = beta[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 { sum / free as f64 } else { (ub + lb) / 2.0 };
    Ok(DualSolution { beta, rho, iterations: iter })
}

pub fn fit_svr(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &SvrConfig, seed: u64) -> Result<SvrModel> {
    cfg.validate()?;
    let rows: Vec<usize> = if x.nrows() > cfg.max_train_rows {
        let mut idx: Vec<usize> = (0..x.nrows()).collect();
        idx.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
        idx.truncate(cfg.max_train_rows);
        idx.sort_unstable();
        idx
    } else {
        (0..x.nrows()).collect()
    };
    let xs = x.select(Axis(0), &rows);
    let ys = y.select(Axis(0), &rows);
    let n = xs.nrows();
    let k = kernel_matrix(xs.view(), xs.view(), cfg.gamma);
    let sols: Vec<DualSolution> = (0..ys.ncols())
        .into_par_iter()
        .map(|j| solve_dual(&k, ys.column(j), cfg))
        .collect::<Result<_>>()?;
    let full_coef = Array2::from_shape_fn((n, sols.len()), |(i, j)| sols[j].beta[i] - sols[j].beta[i + n]);
    let keep: Vec<usize> = (0..n).filter(|&i| full_coef.row(i).iter().any(|&v| v != 0.0)).collect();
    Ok(SvrModel {
        gamma: cfg.gamma,
        support: xs.select(Axis(0), &keep),
        coef: full_coef.select(Axis(0), &keep),
        rho: sols.iter().map(|s| s.rho).collect(),
        iterations: sols.iter().map(|s| s.iterations).collect(),
    })
}

impl SvrModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        if self.support.nrows() == 0 {
            return Array2::from_shape_fn((x.nrows(), self.rho.len()), |(_, j)| -self.rho[j]);
        }
        kernel_matrix(x, self.support.view(), self.gamma).dot(&self.coef) - &self.rho
    }
}

/// Largest violation, in target units, of the tube complementarity
/// conditions for one output: free upper multipliers need residual exactly
/// `+epsilon`, free lower ones `-epsilon`, zero multipliers a residual
/// inside their side of the tube, and saturated ones a residual outside it.
pub fn tube_violation(sol: &DualSolution, k: &Array2<f64>, z: ArrayView1<f64>, cfg: &SvrConfig) -> f64 {
    let n = z.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n).map(|s| (sol.beta[s] - sol.beta[s + n]) * k[[i, s]]).sum::<f64>() - sol.rho;
        let r = z[i] - f;
        let (up, lo) = (sol.beta[i], sol.beta[i + n]);
        let v_up = if up <= 0.0 {
            (r - cfg.epsilon).max(0.0)
        } else if up >= cfg.c {
            (cfg.epsilon - r).max(0.0)
        } else {
            (r - cfg.epsilon).abs()
        };
        let v_lo = if lo <= 0.0 {
            (-r - cfg.epsilon).max(0.0)
        } else if lo >= cfg.c {
            (r + cfg.epsilon).max(0.0)
        } else {
            (r + cfg.epsilon).abs()
        };
        worst = worst.max(v_up).max(v_lo);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn data(n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, 2), |_| rng.gen_range(-2.0..2.0));
        let y = x.map_axis(Axis(1), |r| f64::sin(r[0]) + 0.3 * r[1] + rng.gen_range(-0.05..0.05)).insert_axis(Axis(1));
        (x, y)
    }

    #[test]
    fn fits_smooth_function() {
        let (x, y) = data(300, 1);
        let m = fit_svr(x.view(), y.view(), &SvrConfig { epsilon: 0.05, ..Default::default() }, 0).unwrap();
        let (xt, yt) = data(200, 2);
        let err = (&m.predict(xt.view()) - &yt).mapv(f64::abs);
        assert!(err.mean().unwrap() < 0.08, "{}", err.mean().unwrap());
    }

    #[test]
    fn dual_stays_feasible() {
        let (x, y) = data(120, 3);
        let cfg = SvrConfig { c: 1.0, ..Default::default() };
        let k = kernel_matrix(x.view(), x.view(), cfg.gamma);
        let sol = solve_dual(&k, y.column(0), &cfg).unwrap();
        let n = 120;
        let balance: f64 = (0..n).map(|i| sol.beta[i] - sol.beta[i + n]).sum();
        assert!(balance.abs() < 1e-9);
        assert!(sol.beta.iter().all(|&b| (0.0..=cfg.c).contains(&b)));
        // A pair never has both multipliers active.
        assert!((0..n).all(|i| sol.beta[i] * sol.beta[i + n] < 1e-12));
    }

    #[test]
    fn wide_tube_gives_constant_model() {
        let (x, y) = data(50, 4);
        let cfg = SvrConfig { epsilon: 100.0, ..Default::default() };
        let m = fit_svr(x.view(), y.view(), &cfg, 0).unwrap();
        assert_eq!(m.support.nrows(), 0);
        let p = m.predict(x.view());
        assert!(p.iter().all(|&v| v == p[[0, 0]]));
    }

    #[test]
    fn subset_cap_is_honoured() {
        let (x, y) = data(100, 5);
        let cfg = SvrConfig { max_train_rows: 30, ..Default::default() };
        let m = fit_svr(x.view(), y.view(), &cfg, 9).unwrap();
        assert!(m.support.nrows() <= 30);
    }
}
