//! Hyperparameter studies: the polynomial degree curve and a random search
//! over MLP architectures.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{train_mlp, Activation, HiddenLayer, MlpConfig};
use super::poly::{fit_poly, PolyConfig};
use super::{prepare, Prepared, Scaling};
use crate::dataset::CampaignDataset;
use crate::error::{Error, Result};
use crate::laydown::derive_seed;

fn mse(a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>) -> f64 {
    let d = &a - &b;
    d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreePoint {
    pub degree: usize,
    pub features: usize,
    /// Standardized-target MSE; `None` when the fit failed.
    pub train_mse: Option<f64>,
    pub val_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeSweep {
    pub points: Vec<DegreePoint>,
}

impl DegreeSweep {
    /// Degree with the lowest validation MSE.
    pub fn best_degree(&self) -> Option<usize> {
        self.points
            .iter()
            .filter_map(|p| p.val_mse.map(|v| (p.degree, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(d, _)| d)
    }
}

/// Unregularized polynomial fits of degree 1..=max on the training split,
/// scored on training and validation rows in standardized target units.
pub fn degree_sweep(ds: &CampaignDataset, max_degree: usize) -> Result<DegreeSweep> {
    if max_degree < 2 {
        return Err(Error::invalid("degree sweep needs max degree >= 2"));
    }
    let prep = prepare(ds, Scaling::Standard, Scaling::Standard)?;
    if prep.x_val.nrows() == 0 {
        return Err(Error::invalid("degree sweep needs a validation split"));
    }
    let points = (1..=max_degree)
        .into_par_iter()
        .map(|degree| {
            let features = super::poly::feature_count(5, degree);
            match fit_poly(prep.x_train.view(), prep.y_train.view(), &PolyConfig { degree }) {
                Ok(m) => {
                    let tr = mse(m.predict(prep.x_train.view()).view(), prep.y_train.view());
                    let va = mse(m.predict(prep.x_val.view()).view(), prep.y_val.view());
                    let finite = tr.is_finite() && va.is_finite();
                    DegreePoint {
                        degree,
                        features,
                        train_mse: finite.then_some(tr),
                        val_mse: finite.then_some(va),
                        error: (!finite).then(|| "non-finite predictions".to_string()),
                    }
                }
                Err(e) => DegreePoint {
                    degree,
                    features,
                    train_mse: None,
                    val_mse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(DegreeSweep { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSearchBounds {
    pub min_layers: usize,
    pub max_layers: usize,
    pub min_width: usize,
    pub max_width: usize,
    pub width_step: usize,
    pub activations: Vec<Activation>,
}

impl Default for MlpSearchBounds {
    fn default() -> Self {
        MlpSearchBounds {
            min_layers: 1,
            max_layers: 5,
            min_width: 8,
            max_width: 1024,
            width_step: 8,
            activations: vec![Activation::Relu, Activation::Sigmoid, Activation::Tanh],
        }
    }
}

impl MlpSearchBounds {
    pub fn validate(&self) -> Result<()> {
        if self.min_layers == 0 || self.min_layers > self.max_layers {
            return Err(Error::invalid("need 1 <= min_layers <= max_layers"));
        }
        if self.width_step == 0 || self.min_width == 0 || self.min_width > self.max_width {
            return Err(Error::invalid("need 0 < min_width <= max_width and width_step > 0"));
        }
        if self.activations.is_empty() {
            return Err(Error::invalid("need at least one activation"));
        }
        Ok(())
    }

    pub fn contains(&self, hidden: &[HiddenLayer]) -> bool {
        (self.min_layers..=self.max_layers).contains(&hidden.len())
            && hidden.iter().all(|h| {
                (self.min_width..=self.max_width).contains(&h.width)
                    && (h.width - self.min_width) % self.width_step == 0
                    && self.activations.contains(&h.activation)
            })
    }

    /// Layer count, each width and each activation drawn uniformly.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<HiddenLayer> {
        let layers = rng.gen_range(self.min_layers..=self.max_layers);
        let steps = (self.max_width - self.min_width) / self.width_step;
        (0..layers)
            .map(|_| HiddenLayer {
                width: self.min_width + self.width_step * rng.gen_range(0..=steps),
                activation: *self.activations.choose(rng).unwrap(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchEntry {
    pub config: MlpConfig,
    pub val_mse: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSearch {
    pub best: MlpConfig,
    pub best_index: usize,
    pub log: Vec<SearchEntry>,
}

/// Trains `samples` random architectures (other settings from `base`) with
/// early stopping and keeps the one with the lowest validation MSE.
pub fn mlp_random_search(
    bounds: &MlpSearchBounds,
    samples: usize,
    prep: &Prepared,
    base: &MlpConfig,
    seed: u64,
) -> Result<MlpSearch> {
    bounds.validate()?;
    if samples == 0 {
        return Err(Error::invalid("random search needs samples >= 1"));
    }
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let configs: Vec<MlpConfig> = (0..samples)
        .map(|_| MlpConfig {
            hidden: bounds.sample(&mut rng),
            ..base.clone()
        })
        .collect();
    let log: Vec<SearchEntry> = configs
        .into_par_iter()
        .enumerate()
        .map(|(i, config)| {
            let fit = train_mlp(
                &config,
                prep.x_train.view(),
                prep.y_train.view(),
                prep.x_val.view(),
                prep.y_val.view(),
                derive_seed(seed, i as u64),
            );
            match fit {
                Ok((_, log)) => SearchEntry {
                    config,
                    val_mse: Some(log.best_val_mse),
                    epochs: log.epochs,
                    error: None,
                },
                Err(e) => SearchEntry {
                    config,
                    val_mse: None,
                    epochs: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best_index = log
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.val_mse.map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NotConverged {
            what: "MLP random search (every configuration failed)".into(),
            iterations: samples,
            residual: f64::NAN,
        })?;
    Ok(MlpSearch {
        best: log[best_index].config.clone(),
        best_index,
        log,
    })
}

/// Convenience wrapper preparing standardized data from a split dataset.
pub fn mlp_random_search_on(
    bounds: &MlpSearchBounds,
    samples: usize,
    ds: &CampaignDataset,
    base: &MlpConfig,
    input: Scaling,
    target: Scaling,
    seed: u64,
) -> Result<MlpSearch> {
    mlp_random_search(bounds, samples, &prepare(ds, input, target)?, base, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogates::tests::toy_dataset;

    fn small_base() -> MlpConfig {
        MlpConfig {
            max_epochs: 30,
            patience: 5,
            batch_size: 16,
            ..MlpConfig::default()
        }
    }

    fn small_bounds() -> MlpSearchBounds {
        MlpSearchBounds {
            max_layers: 2,
            max_width: 32,
            ..Default::default()
        }
    }

    #[test]
    fn sampled_architectures_respect_bounds() {
        let b = MlpSearchBounds::default();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(1);
        for _ in 0..2000 {
            assert!(b.contains(&b.sample(&mut rng)));
        }
    }

    #[test]
    fn single_sample_is_the_answer() {
        let prep = prepare(&toy_dataset(30), Scaling::Standard, Scaling::Standard).unwrap();
        let s = mlp_random_search(&small_bounds(), 1, &prep, &small_base(), 3).unwrap();
        assert_eq!(s.best_index, 0);
        assert_eq!(s.best, s.log[0].config);
    }

    #[test]
    fn best_beats_median() {
        let prep = prepare(&toy_dataset(30), Scaling::Standard, Scaling::Standard).unwrap();
        let s = mlp_random_search(&small_bounds(), 6, &prep, &small_base(), 5).unwrap();
        let mut vals: Vec<f64> = s.log.iter().filter_map(|e| e.val_mse).collect();
        vals.sort_by(f64::total_cmp);
        let median = crate::stats::median(&vals).unwrap();
        assert!(s.log[s.best_index].val_mse.unwrap() <= median);
    }

    #[test]
    fn degree_one_underfits_quadratic_data() {
        let sweep = degree_sweep(&toy_dataset(40), 3).unwrap();
        let tr: Vec<f64> = sweep.points.iter().map(|p| p.train_mse.unwrap()).collect();
        assert!(tr[0] > tr[1]);
        assert!(tr[1] >= tr[2] - 1e-12);
        assert!(degree_sweep(&toy_dataset(40), 1).is_err());
    }
}
