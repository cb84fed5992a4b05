//! Fully connected feed-forward network trained on mean squared error with
//! Adam and validation-based early stopping. Generic over the float type.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, z: &mut Array2<T>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
            Activation::Sigmoid => z.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
            Activation::Tanh => z.mapv_inplace(|v| v.tanh()),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => a * (T::one() - a),
            Activation::Tanh => T::one() - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Dense<T: Scalar> {
    /// `inputs x outputs`.
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar + Serialize + serde::de::DeserializeOwned")]
pub struct Mlp<T: Scalar> {
    pub layers: Vec<Dense<T>>,
}

/// Gradient of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T: Scalar> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes` lists every layer width including input and output;
    /// `activations` has one entry per weight layer. Weights are drawn
    /// uniformly with a fan-in scaled limit (`sqrt(6 / fan_in)` ahead of a
    /// ReLU, `sqrt(3 / fan_in)` otherwise); biases start at zero.
    pub fn new(sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::invalid("need at least two layer sizes and one activation per weight layer"));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid("layer widths must be >= 1"));
        }
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| {
                let gain = if act == Activation::Relu { 6.0 } else { 3.0 };
                let limit = (gain / w[0] as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || T::of(rng.gen_range(-limit..limit))),
                    bias: Array1::zeros(w[1]),
                    activation: act,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut a = x.to_owned();
        for l in &self.layers {
            let mut z = a.dot(&l.weights) + &l.bias;
            l.activation.apply(&mut z);
            a = z;
        }
        a
    }

    fn forward_all(&self, x: ArrayView2<T>) -> Vec<Array2<T>> {
        let mut outs = Vec::with_capacity(self.layers.len() + 1);
        outs.push(x.to_owned());
        for l in &self.layers {
            let mut z = outs.last().unwrap().dot(&l.weights) + &l.bias;
            l.activation.apply(&mut z);
            outs.push(z);
        }
        outs
    }

    /// Mean squared error over every entry of the batch, and its gradient.
    pub fn loss_and_grad(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> (T, Vec<LayerGrad<T>>) {
        let outs = self.forward_all(x);
        let pred = outs.last().unwrap();
        let count = T::of(y.len() as f64);
        let diff = pred - &y;
        let loss = diff.iter().map(|&d| d * d).sum::<T>() / count;
        let mut delta = diff.mapv(|d| T::of(2.0) * d / count);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &outs[li + 1];
            if layer.activation != Activation::Identity {
                delta.zip_mut_with(out, |d, &a| *d *= layer.activation.derivative_from_output(a));
            }
            let input = &outs[li];
            grads.push(LayerGrad {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if li > 0 {
                delta = delta.dot(&layer.weights.t());
            }
        }
        grads.reverse();
        (loss, grads)
    }

    pub fn mse(&self, x: ArrayView2<T>, y: ArrayView2<T>) -> T {
        let d = self.forward(x) - &y;
        d.iter().map(|&v| v * v).sum::<T>() / T::of(y.len() as f64)
    }

    /// Converts every parameter to another float type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weights: l.weights.mapv(|v| U::of(v.to_f64_lossy())),
                    bias: l.bias.mapv(|v| U::of(v.to_f64_lossy())),
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    step: i32,
    m: Vec<LayerGrad<T>>,
    v: Vec<LayerGrad<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &Mlp<T>, learning_rate: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect::<Vec<_>>()
        };
        Adam {
            learning_rate: T::of(learning_rate),
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            epsilon: T::of(1e-8),
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp<T>, grads: &[LayerGrad<T>]) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + eps);
        };
        for (((layer, g), m), v) in net.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<HiddenLayer>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        let relu = |width| HiddenLayer {
            width,
            activation: Activation::Relu,
        };
        MlpConfig {
            hidden: vec![relu(256), relu(512), relu(512), relu(256), relu(768)],
            learning_rate: 1e-3,
            batch_size: 256,
            max_epochs: 1000,
            patience: 20,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|h| h.width == 0) {
            return Err(Error::invalid("hidden widths must be >= 1"));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("learning rate, batch size and epochs must be positive"));
        }
        Ok(())
    }

    pub fn build<T: Scalar>(&self, inputs: usize, outputs: usize, seed: u64) -> Result<Mlp<T>> {
        let mut sizes = vec![inputs];
        sizes.extend(self.hidden.iter().map(|h| h.width));
        sizes.push(outputs);
        let mut acts: Vec<Activation> = self.hidden.iter().map(|h| h.activation).collect();
        acts.push(Activation::Identity);
        Mlp::new(&sizes, &acts, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_val_mse: f64,
    pub best_val_mse: f64,
    pub val_mse: Vec<f64>,
}

/// Mini-batch training; keeps the weights of the best validation epoch.
pub fn train_mlp<T: Scalar>(
    cfg: &MlpConfig,
    x: ArrayView2<T>,
    y: ArrayView2<T>,
    x_val: ArrayView2<T>,
    y_val: ArrayView2<T>,
    seed: u64,
) -> Result<(Mlp<T>, TrainingLog)> {
    cfg.validate()?;
    if x.nrows() == 0 || x.nrows() != y.nrows() || x_val.nrows() == 0 {
        return Err(Error::invalid("MLP training needs nonempty train and validation sets"));
    }
    let mut net = cfg.build::<T>(x.ncols(), y.ncols(), seed)?;
    let mut adam = Adam::new(&net, cfg.learning_rate);
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let initial = net.mse(x_val, y_val).to_f64_lossy();
    let mut best = net.clone();
    let mut best_val = initial;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (_, grads) = net.loss_and_grad(xb.view(), yb.view());
            adam.step(&mut net, &grads);
        }
        let val = net.mse(x_val, y_val).to_f64_lossy();
        if !val.is_finite() {
            return Err(Error::NotConverged {
                what: "MLP training (non-finite validation loss)".into(),
                iterations: epoch,
                residual: val,
            });
        }
        history.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = net.clone();
        } else if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((
        best,
        TrainingLog {
            epochs: history.len(),
            best_epoch,
            initial_val_mse: initial,
            best_val_mse: best_val,
            val_mse: history,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(act: Activation) -> Mlp<f64> {
        Mlp::new(&[2, 3, 2], &[act, Activation::Identity], 3).unwrap()
    }

    #[test]
    fn adam_ignores_zero_gradient() {
        let mut net = tiny(Activation::Tanh);
        let before = net.clone();
        let mut adam = Adam::new(&net, 1e-3);
        let zero: Vec<LayerGrad<f64>> = net
            .layers
            .iter()
            .map(|l| LayerGrad {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
            })
            .collect();
        adam.step(&mut net, &zero);
        assert_eq!(net, before);
    }

    #[test]
    fn table_architecture_shapes() {
        let net = MlpConfig::default().build::<f32>(5, 7, 0).unwrap();
        let widths: Vec<usize> = net.layers.iter().map(|l| l.weights.ncols()).collect();
        assert_eq!(widths, vec![256, 512, 512, 256, 768, 7]);
        assert_eq!(net.input_dim(), 5);
        assert!(net.layers[..5].iter().all(|l| l.activation == Activation::Relu));
        assert_eq!(net.layers[5].activation, Activation::Identity);
    }

    #[test]
    fn cast_round_trip_is_close() {
        let net = tiny(Activation::Sigmoid);
        let back: Mlp<f64> = net.cast::<f32>().cast();
        let x = ndarray::array![[0.3, -0.2]];
        let d = &net.forward(x.view()) - &back.forward(x.view());
        assert!(d.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn rejects_mismatched_activations() {
        assert!(Mlp::<f64>::new(&[2, 3, 2], &[Activation::Relu], 0).is_err());
    }
}
