//! Regression surrogates from the five process parameters to the seven CV
//! values: six model families behind one train / predict / evaluate / save
//! interface.

pub mod bayes;
pub mod forest;
pub(crate) mod linalg;
pub mod linear;
pub mod metrics;
pub mod mlp;
pub mod persist;
pub mod poly;
pub mod svr;
pub mod sweep;

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{CampaignDataset, CampaignRow, Split, Standardizer};
use crate::error::{Error, Result};
use crate::params::{Param, ProcessParams};

pub use bayes::{fit_bayes, BayesConfig, BayesModel};
pub use forest::{fit_forest, Forest, RfConfig};
pub use linear::{fit_linear, LinearConfig, LinearModel, Regularization};
pub use metrics::{evaluate_matrices, Metrics, Scores};
pub use mlp::{train_mlp, Activation, HiddenLayer, Mlp, MlpConfig, TrainingLog};
pub use persist::{load, load_family, save};
pub use poly::{fit_poly, PolyConfig, PolyModel};
pub use svr::{fit_svr, SvrConfig, SvrModel};

/// Output column names, in resolution order.
pub const OUTPUT_NAMES: [&str; 7] = ["cv_0p5", "cv_1", "cv_2", "cv_5", "cv_10", "cv_20", "cv_50"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Svr,
    Polynomial,
    Bayesian,
    RandomForest,
    Mlp,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Linear,
        Family::Svr,
        Family::Polynomial,
        Family::Bayesian,
        Family::RandomForest,
        Family::Mlp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Svr => "svr",
            Family::Polynomial => "polynomial",
            Family::Bayesian => "bayesian",
            Family::RandomForest => "random_forest",
            Family::Mlp => "mlp",
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown model family {s:?}")))
    }
}

/// Family plus its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    Linear(LinearConfig),
    Svr(SvrConfig),
    Polynomial(PolyConfig),
    Bayesian(BayesConfig),
    RandomForest(RfConfig),
    Mlp(MlpConfig),
}

impl FamilySpec {
    pub fn family(&self) -> Family {
        match self {
            FamilySpec::Linear(_) => Family::Linear,
            FamilySpec::Svr(_) => Family::Svr,
            FamilySpec::Polynomial(_) => Family::Polynomial,
            FamilySpec::Bayesian(_) => Family::Bayesian,
            FamilySpec::RandomForest(_) => Family::RandomForest,
            FamilySpec::Mlp(_) => Family::Mlp,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Linear => FamilySpec::Linear(LinearConfig::default()),
            Family::Svr => FamilySpec::Svr(SvrConfig::default()),
            Family::Polynomial => FamilySpec::Polynomial(PolyConfig::default()),
            Family::Bayesian => FamilySpec::Bayesian(BayesConfig::default()),
            Family::RandomForest => FamilySpec::RandomForest(RfConfig::default()),
            Family::Mlp => FamilySpec::Mlp(MlpConfig::default()),
        }
    }
}

/// How inputs or CV targets are transformed before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Per-column z-score.
    #[default]
    Standard,
    /// Natural log, then per-column z-score. For targets, errors become
    /// relative and predictions stay positive; for inputs, ranges spanning
    /// decades are spread evenly.
    LogStandard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub config: FamilySpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub input: Scaling,
    #[serde(default)]
    pub target: Scaling,
}

impl ModelSpec {
    pub fn new(config: FamilySpec, seed: u64) -> Self {
        ModelSpec {
            config,
            seed,
            input: Scaling::Standard,
            target: Scaling::Standard,
        }
    }

    pub fn family(&self) -> Family {
        self.config.family()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scaling: Scaling,
    pub standardizer: Standardizer<f64>,
}

impl Transform {
    fn fit(y: ArrayView2<f64>, scaling: Scaling, names: &[&str]) -> Result<Self> {
        let t = Self::pre(y, scaling)?;
        Ok(Transform {
            scaling,
            standardizer: Standardizer::fit(t.view(), names)?,
        })
    }

    fn pre(y: ArrayView2<f64>, scaling: Scaling) -> Result<Array2<f64>> {
        match scaling {
            Scaling::Standard => Ok(y.to_owned()),
            Scaling::LogStandard => {
                if y.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::invalid("log scaling needs positive values"));
                }
                Ok(y.mapv(f64::ln))
            }
        }
    }

    pub fn forward(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.standardizer.transform(Self::pre(y, self.scaling)?.view())
    }

    pub fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        let t = self.standardizer.inverse_transform(z)?;
        Ok(match self.scaling {
            Scaling::Standard => t,
            Scaling::LogStandard => t.mapv(f64::exp),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parameters", rename_all = "snake_case")]
pub enum FittedModel {
    Linear(LinearModel),
    Svr(SvrModel),
    Polynomial(PolyModel),
    Bayesian(BayesModel),
    RandomForest(Forest),
    Mlp(Mlp<f64>),
}

impl FittedModel {
    pub fn family(&self) -> Family {
        match self {
            FittedModel::Linear(_) => Family::Linear,
            FittedModel::Svr(_) => Family::Svr,
            FittedModel::Polynomial(_) => Family::Polynomial,
            FittedModel::Bayesian(_) => Family::Bayesian,
            FittedModel::RandomForest(_) => Family::RandomForest,
            FittedModel::Mlp(_) => Family::Mlp,
        }
    }

    /// Predicts in standardized space.
    pub fn predict_standardized(&self, z: ArrayView2<f64>) -> Array2<f64> {
        match self {
            FittedModel::Linear(m) => m.predict(z),
            FittedModel::Svr(m) => m.predict(z),
            FittedModel::Polynomial(m) => m.predict(z),
            FittedModel::Bayesian(m) => m.predict(z),
            FittedModel::RandomForest(m) => m.predict(z),
            FittedModel::Mlp(m) => m.forward(z),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Solver iterations, tree count or epochs, depending on family.
    pub iterations: usize,
    pub train_seconds: f64,
    pub train_rows: usize,
    pub val_rows: usize,
    /// MLP only.
    pub training_log: Option<TrainingLog>,
}

/// A fitted model with its input and target transforms. Immutable after
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedSurrogate {
    pub spec: ModelSpec,
    pub input: Transform,
    pub target: Transform,
    pub model: FittedModel,
    pub meta: TrainingMeta,
}

/// Standardized train and validation matrices plus the transforms that
/// produced them.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub input: Transform,
    pub target: Transform,
    pub x_train: Array2<f64>,
    pub y_train: Array2<f64>,
    pub x_val: Array2<f64>,
    pub y_val: Array2<f64>,
}

fn param_names() -> [&'static str; 5] {
    Param::ALL.map(Param::name)
}

/// Raw feature and target matrices of the given rows.
pub fn matrices(rows: &[&CampaignRow]) -> (Array2<f64>, Array2<f64>) {
    let mut x = Array2::zeros((rows.len(), 5));
    let mut y = Array2::zeros((rows.len(), 7));
    for (i, r) in rows.iter().enumerate() {
        for (j, v) in r.params.to_array().into_iter().enumerate() {
            x[[i, j]] = v;
        }
        let cv = &r.profile().expect("completed row").cv;
        for (j, &v) in cv.iter().enumerate() {
            y[[i, j]] = v;
        }
    }
    (x, y)
}

/// Fits the transforms on training rows and applies them to training and
/// validation rows.
pub fn prepare(ds: &CampaignDataset, input: Scaling, target: Scaling) -> Result<Prepared> {
    let train = ds.split_rows(Split::Train);
    let val = ds.split_rows(Split::Val);
    if train.is_empty() {
        return Err(Error::invalid("dataset has no completed training rows"));
    }
    let (xt, yt) = matrices(&train);
    let (xv, yv) = matrices(&val);
    let input = Transform::fit(xt.view(), input, &param_names())?;
    let target = Transform::fit(yt.view(), target, &OUTPUT_NAMES)?;
    Ok(Prepared {
        x_train: input.forward(xt.view())?,
        y_train: target.forward(yt.view())?,
        x_val: input.forward(xv.view())?,
        y_val: target.forward(yv.view())?,
        input,
        target,
    })
}

/// Fits `spec` on the training split. The validation split is used only by
/// the MLP for early stopping.
pub fn train(spec: &ModelSpec, ds: &CampaignDataset) -> Result<TrainedSurrogate> {
    let prep = prepare(ds, spec.input, spec.target)?;
    train_prepared(spec, &prep)
}

pub fn train_prepared(spec: &ModelSpec, prep: &Prepared) -> Result<TrainedSurrogate> {
    let (x, y) = (prep.x_train.view(), prep.y_train.view());
    let start = Instant::now();
    let mut training_log = None;
    let (model, iterations) = match &spec.config {
        FamilySpec::Linear(c) => {
            let m = fit_linear(x, y, c)?;
            let it = m.iterations;
            (FittedModel::Linear(m), it)
        }
        FamilySpec::Svr(c) => {
            let m = fit_svr(x, y, c, spec.seed)?;
            let it = m.iterations.iter().sum();
            (FittedModel::Svr(m), it)
        }
        FamilySpec::Polynomial(c) => (FittedModel::Polynomial(fit_poly(x, y, c)?), 0),
        FamilySpec::Bayesian(c) => (FittedModel::Bayesian(fit_bayes(x, y, c)?), 0),
        FamilySpec::RandomForest(c) => {
            let f = fit_forest(x, y, c, spec.seed)?;
            let n = f.trees.len();
            (FittedModel::RandomForest(f), n)
        }
        FamilySpec::Mlp(c) => {
            if prep.x_val.nrows() == 0 {
                return Err(Error::invalid("MLP training needs a validation split for early stopping"));
            }
            let (net, log) = train_mlp(c, x, y, prep.x_val.view(), prep.y_val.view(), spec.seed)?;
            let it = log.epochs;
            training_log = Some(log);
            (FittedModel::Mlp(net), it)
        }
    };
    Ok(TrainedSurrogate {
        spec: spec.clone(),
        input: prep.input.clone(),
        target: prep.target.clone(),
        model,
        meta: TrainingMeta {
            iterations,
            train_seconds: start.elapsed().as_secs_f64(),
            train_rows: prep.x_train.nrows(),
            val_rows: prep.x_val.nrows(),
            training_log,
        },
    })
}

impl TrainedSurrogate {
    pub fn family(&self) -> Family {
        self.model.family()
    }

    /// Predictions for raw parameter rows (`rows x 5`).
    pub fn predict_matrix(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let z = self.input.forward(x)?;
        self.target.inverse(self.model.predict_standardized(z.view()).view())
    }

    pub fn predict(&self, params: &ProcessParams) -> Result<[f64; 7]> {
        let p = self.predict_batch(std::slice::from_ref(params))?;
        let mut out = [0.0; 7];
        out.iter_mut().zip(p.row(0)).for_each(|(o, &v)| *o = v);
        Ok(out)
    }

    /// One row per input, in input order.
    pub fn predict_batch(&self, params: &[ProcessParams]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((params.len(), 5));
        for (i, p) in params.iter().enumerate() {
            for (j, v) in p.to_array().into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        self.predict_matrix(x.view())
    }

    /// Posterior predictive variance per output, in CV units (first-order
    /// propagation through the log for log-scaled targets). Bayesian family
    /// only.
    pub fn predictive_variance(&self, params: &[ProcessParams]) -> Result<Array2<f64>> {
        let FittedModel::Bayesian(m) = &self.model else {
            return Err(Error::FamilyMismatch {
                expected: Family::Bayesian.to_string(),
                found: self.family().to_string(),
            });
        };
        let mut x = Array2::zeros((params.len(), 5));
        for (i, p) in params.iter().enumerate() {
            for (j, v) in p.to_array().into_iter().enumerate() {
                x[[i, j]] = v;
            }
        }
        let z = self.input.forward(x.view())?;
        let mut var = m.predictive_variance(z.view());
        let sd = &self.target.standardizer.std;
        match self.target.scaling {
            Scaling::Standard => {
                for mut row in var.rows_mut() {
                    row.iter_mut().zip(sd).for_each(|(v, s)| *v *= s * s);
                }
            }
            Scaling::LogStandard => {
                let mean = self.target.inverse(m.predict(z.view()).view())?;
                for (mut row, mu) in var.rows_mut().into_iter().zip(mean.rows()) {
                    for ((v, s), m) in row.iter_mut().zip(sd).zip(mu) {
                        *v *= s * s * m * m;
                    }
                }
            }
        }
        Ok(var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub family: Family,
    pub split: Split,
    pub rows: usize,
    pub mape: f64,
    pub mse: f64,
    pub r2: f64,
    pub per_resolution: BTreeMap<String, Scores>,
    pub train_seconds: f64,
    pub predict_microseconds_per_sample: f64,
}

/// Scores the model on one split, in CV units.
pub fn evaluate(model: &TrainedSurrogate, ds: &CampaignDataset, split: Split) -> Result<EvaluationReport> {
    let rows = ds.split_rows(split);
    if rows.is_empty() {
        return Err(Error::invalid(format!("split {split} has no completed rows")));
    }
    let (x, y) = matrices(&rows);
    let start = Instant::now();
    let pred = model.predict_matrix(x.view())?;
    let micros = start.elapsed().as_secs_f64() * 1e6 / rows.len() as f64;
    let m = evaluate_matrices(y.view(), pred.view())?;
    Ok(EvaluationReport {
        family: model.family(),
        split,
        rows: rows.len(),
        mape: m.pooled.mape,
        mse: m.pooled.mse,
        r2: m.pooled.r2,
        per_resolution: OUTPUT_NAMES.iter().map(|s| s.to_string()).zip(m.per_output).collect(),
        train_seconds: model.meta.train_seconds,
        predict_microseconds_per_sample: micros,
    })
}
