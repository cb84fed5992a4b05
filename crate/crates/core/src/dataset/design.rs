//! Experimental designs over the process space.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::params::{Param, ParamRanges, ProcessParams};

/// Latin hypercube design: in every dimension the `k` values fall one per
/// equal-width stratum, jittered uniformly inside it, with strata shuffled
/// independently per dimension.
pub fn latin_hypercube(ranges: &ParamRanges, k: usize, seed: u64) -> Result<Vec<ProcessParams>> {
    if k == 0 {
        return Err(Error::invalid("latin hypercube needs k >= 1"));
    }
    for p in Param::ALL {
        let iv = ranges.get(p);
        if !(iv.hi > iv.lo) {
            return Err(Error::invalid(format!("range of {} is empty", p.name())));
        }
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut unit = vec![[0.0f64; 5]; k];
    let mut strata: Vec<usize> = (0..k).collect();
    for d in 0..5 {
        strata.shuffle(&mut rng);
        for (row, &s) in unit.iter_mut().zip(&strata) {
            let u: f64 = rng.gen();
            // Keep the jittered value inside its own stratum even when
            // rounding would push it onto the next boundary.
            row[d] = ((s as f64 + u) / k as f64).min(((s + 1) as f64 / k as f64).next_down_());
        }
    }
    Ok(unit.into_iter().map(|u| ranges.denormalize(u)).collect())
}

trait NextDown {
    fn next_down_(self) -> Self;
}

impl NextDown for f64 {
    fn next_down_(self) -> f64 {
        if self <= 0.0 {
            self
        } else {
            f64::from_bits(self.to_bits() - 1)
        }
    }
}

/// Evenly spaced levels across each parameter's range; a single level sits
/// at the midpoint.
pub fn uniform_levels(ranges: &ParamRanges, levels: [usize; 5]) -> Result<[Vec<f64>; 5]> {
    let mut out: [Vec<f64>; 5] = Default::default();
    for p in Param::ALL {
        let n = levels[p.index()];
        if n == 0 {
            return Err(Error::invalid(format!("{} needs at least one level", p.name())));
        }
        let iv = ranges.get(p);
        out[p.index()] = if n == 1 {
            vec![iv.denormalize(0.5)]
        } else {
            (0..n).map(|i| iv.denormalize(i as f64 / (n - 1) as f64)).collect()
        };
    }
    Ok(out)
}

/// Full factorial over explicit per-parameter levels, last parameter varying
/// fastest.
pub fn expert_grid(levels: &[Vec<f64>; 5]) -> Result<Vec<ProcessParams>> {
    if let Some(p) = Param::ALL.iter().find(|p| levels[p.index()].is_empty()) {
        return Err(Error::invalid(format!("{} needs at least one level", p.name())));
    }
    let total: usize = levels.iter().map(Vec::len).product();
    let mut out = Vec::with_capacity(total);
    let mut idx = [0usize; 5];
    for _ in 0..total {
        let x = std::array::from_fn(|d| levels[d][idx[d]]);
        out.push(ProcessParams::from_array(x));
        for d in (0..5).rev() {
            idx[d] += 1;
            if idx[d] < levels[d].len() {
                break;
            }
            idx[d] = 0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_lies_inside_ranges() {
        let r = ParamRanges::default();
        let pts = latin_hypercube(&r, 1, 3).unwrap();
        assert_eq!(pts.len(), 1);
        assert!(r.contains(&pts[0]));
    }

    #[test]
    fn ten_points_fill_every_decile() {
        let r = ParamRanges::default();
        let pts = latin_hypercube(&r, 10, 42).unwrap();
        for p in Param::ALL {
            let iv = r.get(p);
            let mut seen = [0; 10];
            for x in &pts {
                let u = iv.normalize(x.get(p));
                seen[(u * 10.0).floor() as usize] += 1;
            }
            assert_eq!(seen, [1; 10], "{}", p.name());
        }
    }

    #[test]
    fn zero_points_rejected() {
        assert!(latin_hypercube(&ParamRanges::default(), 0, 1).is_err());
    }

    #[test]
    fn factorial_counts() {
        let r = ParamRanges::default();
        assert_eq!(expert_grid(&uniform_levels(&r, [1; 5]).unwrap()).unwrap().len(), 1);
        assert_eq!(expert_grid(&uniform_levels(&r, [5; 5]).unwrap()).unwrap().len(), 3125);
        assert_eq!(expert_grid(&uniform_levels(&r, [2, 3, 1, 1, 1]).unwrap()).unwrap().len(), 6);
    }

    #[test]
    fn factorial_is_exhaustive_and_ordered() {
        let lv = [vec![1.0, 2.0], vec![3.0], vec![4.0], vec![0.1], vec![100.0, 200.0]];
        let g = expert_grid(&lv).unwrap();
        let firsts: Vec<_> = g.iter().map(|p| (p.sigma1, p.spin_density)).collect();
        assert_eq!(firsts, vec![(1.0, 100.0), (1.0, 200.0), (2.0, 100.0), (2.0, 200.0)]);
    }

    #[test]
    fn single_level_is_midpoint() {
        let r = ParamRanges::default();
        let lv = uniform_levels(&r, [1; 5]).unwrap();
        assert_eq!(lv[0], vec![25.5]);
    }
}
