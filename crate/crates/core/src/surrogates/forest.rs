//! Random forest of CART regression trees with vector-valued leaves.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laydown::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub trees: usize,
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    /// Features tried per split; `None` tries all.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for RfConfig {
    fn default() -> Self {
        RfConfig {
            trees: 100,
            max_depth: None,
            min_samples_leaf: 1,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, x: ArrayView1<f64>) -> &[f64] {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(t: &Tree, at: usize) -> usize {
            match &t.nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + rec(t, *left).max(rec(t, *right)),
            }
        }
        rec(self, 0)
    }
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    cfg: &'a RfConfig,
    rng: Xoshiro256PlusPlus,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    at: usize,
}

impl Builder<'_> {
    fn leaf(&self, rows: &[usize]) -> Node {
        let k = self.y.ncols();
        let mut m = vec![0.0; k];
        for &r in rows {
            for (j, v) in m.iter_mut().enumerate() {
                *v += self.y[[r, j]];
            }
        }
        m.iter_mut().for_each(|v| *v /= rows.len() as f64);
        Node::Leaf(m)
    }

    /// Sum over outputs of the within-node sum of squares.
    fn sse(sum: &[f64], sq: &[f64], n: f64) -> f64 {
        sum.iter().zip(sq).map(|(s, q)| q - s * s / n).sum()
    }

    fn best_split(&mut self, rows: &mut [usize]) -> Option<BestSplit> {
        let k = self.y.ncols();
        let p = self.x.ncols();
        let mut features: Vec<usize> = (0..p).collect();
        if let Some(m) = self.cfg.max_features {
            if m < p {
                features.shuffle(&mut self.rng);
                features.truncate(m.max(1));
            }
        }
        features.sort_unstable();
        let n = rows.len();
        let mut tot_sum = vec![0.0; k];
        let mut tot_sq = vec![0.0; k];
        for &r in rows.iter() {
            for j in 0..k {
                let v = self.y[[r, j]];
                tot_sum[j] += v;
                tot_sq[j] += v * v;
            }
        }
        let parent = Self::sse(&tot_sum, &tot_sq, n as f64);
        let min_leaf = self.cfg.min_samples_leaf.max(1);
        let mut best: Option<BestSplit> = None;
        for &f in &features {
            rows.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
            let mut ls = vec![0.0; k];
            let mut lq = vec![0.0; k];
            for i in 0..n - 1 {
                let r = rows[i];
                for j in 0..k {
                    let v = self.y[[r, j]];
                    ls[j] += v;
                    lq[j] += v * v;
                }
                let (a, b) = (self.x[[r, f]], self.x[[rows[i + 1], f]]);
                let nl = i + 1;
                if a == b || nl < min_leaf || n - nl < min_leaf {
                    continue;
                }
                let rs: Vec<f64> = tot_sum.iter().zip(&ls).map(|(t, l)| t - l).collect();
                let rq: Vec<f64> = tot_sq.iter().zip(&lq).map(|(t, l)| t - l).collect();
                let gain = parent - Self::sse(&ls, &lq, nl as f64) - Self::sse(&rs, &rq, (n - nl) as f64);
                // Strict improvement keeps the lowest feature, then the
                // lowest threshold, among ties.
                if gain > best.as_ref().map_or(0.0, |b| b.gain) {
                    let mid = a + (b - a) / 2.0;
                    best = Some(BestSplit {
                        feature: f,
                        threshold: if mid < b { mid } else { a },
                        gain,
                        at: nl,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(Vec::new()));
        let can_split = rows.len() >= 2 * self.cfg.min_samples_leaf.max(1) && self.cfg.max_depth.map_or(true, |d| depth < d);
        let split = if can_split { self.best_split(rows) } else { None };
        match split {
            None => self.nodes[id] = self.leaf(rows),
            Some(s) => {
                let f = s.feature;
                rows.sort_by(|&a, &b| self.x[[a, f]].total_cmp(&self.x[[b, f]]).then(a.cmp(&b)));
                let (l, r) = rows.split_at_mut(s.at);
                let left = self.grow(l, depth + 1);
                let right = self.grow(r, depth + 1);
                self.nodes[id] = Node::Split {
                    feature: f,
                    threshold: s.threshold,
                    left,
                    right,
                };
            }
        }
        id
    }
}

pub fn fit_tree(x: ArrayView2<f64>, y: ArrayView2<f64>, rows: &mut [usize], cfg: &RfConfig, seed: u64) -> Tree {
    let mut b = Builder {
        x: x.view(),
        y: y.view(),
        cfg,
        rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        nodes: Vec::new(),
    };
    b.grow(rows, 0);
    Tree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub outputs: usize,
}

pub fn fit_forest(x: ArrayView2<f64>, y: ArrayView2<f64>, cfg: &RfConfig, seed: u64) -> Result<Forest> {
    if cfg.trees == 0 {
        return Err(Error::invalid("forest needs at least one tree"));
    }
    if x.nrows() == 0 || x.nrows() != y.nrows() {
        return Err(Error::invalid("forest needs matching nonempty inputs"));
    }
    let n = x.nrows();
    let trees = (0..cfg.trees)
        .into_par_iter()
        .map(|t| {
            let tseed = derive_seed(seed, t as u64);
            let mut rows: Vec<usize> = if cfg.bootstrap {
                let mut rng = Xoshiro256PlusPlus::seed_from_u64(tseed ^ 0xb007);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, y, &mut rows, cfg, tseed)
        })
        .collect();
    Ok(Forest { trees, outputs: y.ncols() })
}

impl Forest {
    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((x.nrows(), self.outputs));
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut acc = Array1::<f64>::zeros(self.outputs);
            for t in &self.trees {
                for (a, v) in acc.iter_mut().zip(t.predict_row(row)) {
                    *a += v;
                }
            }
            acc /= self.trees.len() as f64;
            out.row_mut(i).assign(&acc);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tie_prefers_lowest_feature() {
        // Both features separate the targets perfectly.
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let y = array![[0.0], [1.0]];
        let t = fit_tree(x.view(), y.view(), &mut [0, 1], &RfConfig::default(), 0);
        match &t.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 0.5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn depth_limit_respected() {
        let x = Array2::from_shape_fn((64, 1), |(i, _)| i as f64);
        let y = x.mapv(|v| v * v);
        let cfg = RfConfig {
            max_depth: Some(3),
            ..Default::default()
        };
        let t = fit_tree(x.view(), y.view(), &mut (0..64).collect::<Vec<_>>(), &cfg, 0);
        assert_eq!(t.depth(), 3);
    }

    #[test]
    fn min_leaf_respected() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64);
        let y = x.clone();
        let cfg = RfConfig {
            min_samples_leaf: 5,
            bootstrap: false,
            ..Default::default()
        };
        let t = fit_tree(x.view(), y.view(), &mut (0..20).collect::<Vec<_>>(), &cfg, 0);
        let leaves = t.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count();
        assert_eq!(leaves, 4);
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * (j + 1)) as f64);
        let y = Array2::from_elem((10, 3), 2.5);
        let f = fit_forest(x.view(), y.view(), &RfConfig { trees: 3, ..Default::default() }, 1).unwrap();
        assert!(f.trees.iter().all(|t| t.nodes.len() == 1));
        assert!(f.predict(x.view()).iter().all(|&v| v == 2.5));
    }
}
