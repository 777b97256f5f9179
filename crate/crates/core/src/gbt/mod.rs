//! Quantile gradient boosting: one boosted forest per quantile level.

mod tree;

pub use tree::{fit_tree, set_pinball_loss, Tree, TreeParams};

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{AgingMode, DegradationSample};
use crate::error::{Error, Result};
use crate::scalar::{sort_scalars, Scalar};

pub const SCHEMA_VERSION: &str = "gbt-v1";

pub const DEFAULT_QUANTILES: [f64; 7] = [0.05, 0.10, 0.50, 0.80, 0.85, 0.90, 0.95];

/// `q (r - r_hat)` when the prediction is low, `(1 - q)(r_hat - r)` otherwise.
pub fn pinball_loss<F: Scalar>(r: F, r_hat: F, q: F) -> F {
    if r >= r_hat {
        q * (r - r_hat)
    } else {
        (F::one() - q) * (r_hat - r)
    }
}

/// Checked variant of [`pinball_loss`].
pub fn pinball_loss_checked<F: Scalar>(r: F, r_hat: F, q: F) -> Result<F> {
    if !(q > F::zero() && q < F::one()) {
        return Err(Error::Domain(format!("quantile level {q} outside (0, 1)")));
    }
    Ok(pinball_loss(r, r_hat, q))
}

/// The `ceil(q n)`-th smallest value, which minimises the pinball loss.
pub fn empirical_quantile<F: Scalar>(values: &[F], q: f64) -> F {
    let mut v = values.to_vec();
    sort_scalars(&mut v);
    v[tree::quantile_rank(q, v.len()) - 1]
}

pub fn mean_pinball<F: Scalar>(labels: &[F], preds: &[F], q: f64) -> F {
    let qf = F::of(q);
    let total: F = labels.iter().zip(preds).map(|(&r, &p)| pinball_loss(r, p, qf)).sum();
    total / F::of_usize(labels.len().max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Rounds without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Row fraction drawn (without replacement) for each tree.
    pub subsample: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { n_rounds: 200, learning_rate: 0.1, max_depth: 4, min_samples_leaf: 10, patience: 20, subsample: 1.0 }
    }
}

impl GbtParams {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate {} outside (0, 1]", self.learning_rate)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Config(format!("subsample {} outside (0, 1]", self.subsample)));
        }
        Ok(())
    }
}

/// Boosted trees for one quantile level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QuantileForest<F: Scalar> {
    pub quantile: f64,
    pub base_score: F,
    pub trees: Vec<Tree<F>>,
    /// Validation loss after 0, 1, ... accepted rounds.
    pub validation_loss: Vec<F>,
}

impl<F: Scalar> QuantileForest<F> {
    pub fn predict(&self, x: &[F], learning_rate: F) -> F {
        self.base_score + self.trees.iter().map(|t| learning_rate * t.predict(x)).sum::<F>()
    }
}

/// A set of per-quantile forests over a shared feature schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QuantileEnsemble<F: Scalar> {
    pub schema_version: String,
    pub mode: AgingMode,
    pub feature_names: Vec<String>,
    pub quantiles: Vec<f64>,
    pub params: GbtParams,
    pub seed: u64,
    pub feature_min: Vec<F>,
    pub feature_max: Vec<F>,
    pub forests: Vec<QuantileForest<F>>,
}

/// Training data for one mode: row-major features and labels.
pub struct TrainingSet<F> {
    pub x: Vec<Vec<F>>,
    pub y: Vec<F>,
}

impl<F: Scalar> TrainingSet<F> {
    pub fn from_samples(samples: &[DegradationSample], mode: AgingMode) -> Self {
        let rows: Vec<&DegradationSample> = samples.iter().filter(|s| s.mode == mode).collect();
        Self {
            x: rows.iter().map(|s| s.features().into_iter().map(F::of).collect()).collect(),
            y: rows.iter().map(|s| F::of(s.rate)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn validate(&self, width: usize, what: &str) -> Result<()> {
        if self.x.len() != self.y.len() {
            return Err(Error::Data(format!("{what}: {} feature rows but {} labels", self.x.len(), self.y.len())));
        }
        for (i, (row, y)) in self.x.iter().zip(&self.y).enumerate() {
            if row.len() != width {
                return Err(Error::Data(format!("{what}: row {i} has {} features, expected {width}", row.len())));
            }
            if !y.is_finite() || row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("{what}: row {i} has a non-finite value")));
            }
        }
        Ok(())
    }
}

fn check_quantiles(quantiles: &[f64]) -> Result<()> {
    if quantiles.is_empty() {
        return Err(Error::Config("at least one quantile is required".into()));
    }
    if quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) || quantiles.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("quantiles must be strictly increasing within (0, 1), got {quantiles:?}")));
    }
    Ok(())
}

fn train_forest<F: Scalar>(
    train: &TrainingSet<F>,
    valid: &TrainingSet<F>,
    q: f64,
    params: &GbtParams,
    seed: u64,
) -> QuantileForest<F> {
    let lr = F::of(params.learning_rate);
    let base = empirical_quantile(&train.y, q);
    let tp = TreeParams { max_depth: params.max_depth, min_samples_leaf: params.min_samples_leaf };
    let mut pred_train = vec![base; train.len()];
    let mut pred_valid = vec![base; valid.len()];
    let mut trees = Vec::new();
    let early_stop = params.patience > 0 && !valid.is_empty();
    let mut history = vec![mean_pinball(&valid.y, &pred_valid, q)];
    let mut best = (history[0], 0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_rows: Vec<usize> = (0..train.len()).collect();
    let n_sub = ((params.subsample * train.len() as f64).round() as usize).clamp(1, train.len());
    for round in 1..=params.n_rounds {
        let residuals: Vec<F> = train.y.iter().zip(&pred_train).map(|(&y, &p)| y - p).collect();
        let rows = if n_sub < train.len() {
            let mut r = index::sample(&mut rng, train.len(), n_sub).into_vec();
            r.sort_unstable();
            r
        } else {
            all_rows.clone()
        };
        let tree = fit_tree(&train.x, &residuals, &rows, q, &tp);
        for (p, x) in pred_train.iter_mut().zip(&train.x) {
            *p += lr * tree.predict(x);
        }
        for (p, x) in pred_valid.iter_mut().zip(&valid.x) {
            *p += lr * tree.predict(x);
        }
        trees.push(tree);
        let loss = mean_pinball(&valid.y, &pred_valid, q);
        history.push(loss);
        if loss < best.0 {
            best = (loss, round);
        }
        if early_stop && round - best.1 >= params.patience {
            break;
        }
    }
    if early_stop {
        trees.truncate(best.1);
        history.truncate(best.1 + 1);
    }
    QuantileForest { quantile: q, base_score: base, trees, validation_loss: history }
}

impl<F: Scalar> QuantileEnsemble<F> {
    /// Trains one forest per quantile. `valid` drives early stopping.
    pub fn train(
        mode: AgingMode,
        train: &TrainingSet<F>,
        valid: &TrainingSet<F>,
        quantiles: &[f64],
        params: &GbtParams,
        seed: u64,
    ) -> Result<Self> {
        check_quantiles(quantiles)?;
        params.validate()?;
        let width = mode.num_features();
        if train.len() < 50 {
            return Err(Error::Data(format!("{mode} model needs at least 50 training samples, got {}", train.len())));
        }
        train.validate(width, "training set")?;
        valid.validate(width, "validation set")?;
        if params.patience > 0 && valid.is_empty() {
            return Err(Error::Data("early stopping needs a nonempty validation set".into()));
        }
        let feature_min = (0..width).map(|j| train.x.iter().map(|r| r[j]).fold(F::infinity(), F::min)).collect();
        let feature_max = (0..width).map(|j| train.x.iter().map(|r| r[j]).fold(F::neg_infinity(), F::max)).collect();
        let forests = quantiles
            .par_iter()
            .enumerate()
            .map(|(k, &q)| train_forest(train, valid, q, params, seed.wrapping_add(k as u64)))
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION.into(),
            mode,
            feature_names: mode.feature_names().iter().map(|s| s.to_string()).collect(),
            quantiles: quantiles.to_vec(),
            params: *params,
            seed,
            feature_min,
            feature_max,
            forests,
        })
    }

    /// Quantile predictions at `x`, sorted ascending.
    pub fn predict_quantiles(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.feature_names.len() {
            return Err(Error::Data(format!(
                "{} model expects {} features, got {}",
                self.mode,
                self.feature_names.len(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("feature vector has a non-finite entry".into()));
        }
        let lr = F::of(self.params.learning_rate);
        let mut out: Vec<F> = self.forests.iter().map(|f| f.predict(x, lr)).collect();
        sort_scalars(&mut out);
        Ok(out)
    }

    pub fn quantile_index(&self, q: f64) -> Result<usize> {
        self.quantiles.iter().position(|&v| (v - q).abs() < 1e-9).ok_or_else(|| {
            Error::Config(format!(
                "quantile {q} not trained in the {} model; available: {:?}",
                self.mode, self.quantiles
            ))
        })
    }

    /// The sorted-vector entry for level `q`.
    pub fn predict_at(&self, x: &[F], q: f64) -> Result<F> {
        let k = self.quantile_index(q)?;
        Ok(self.predict_quantiles(x)?[k])
    }

    /// Lower clamps for prediction inputs: the training minimum of every
    /// feature from DOD onward, `-inf` for capacity and temperature.
    pub fn feature_floors(&self) -> Vec<F> {
        self.feature_min
            .iter()
            .enumerate()
            .map(|(j, &v)| if j >= 2 { v } else { F::neg_infinity() })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported model schema {:?}", self.schema_version)));
        }
        check_quantiles(&self.quantiles)?;
        let width = self.mode.num_features();
        if self.feature_names.len() != width || self.feature_min.len() != width || self.feature_max.len() != width {
            return Err(Error::Config(format!("{} model must have {width} features", self.mode)));
        }
        if self.forests.len() != self.quantiles.len() {
            return Err(Error::Config("one forest per quantile is required".into()));
        }
        for (f, &q) in self.forests.iter().zip(&self.quantiles) {
            if (f.quantile - q).abs() > 1e-12 {
                return Err(Error::Config(format!("forest for {} listed under quantile {q}", f.quantile)));
            }
            for t in &f.trees {
                t.validate(width).map_err(Error::Config)?;
            }
        }
        Ok(())
    }
}

impl QuantileEnsemble<f64> {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        model.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Piecewise-linear inverse CDF through `(levels[k], values[k])`, flat beyond
/// the extreme levels.
pub fn inverse_cdf<F: Scalar>(levels: &[f64], values: &[F], u: f64) -> F {
    let n = levels.len();
    if u <= levels[0] {
        return values[0];
    }
    if u >= levels[n - 1] {
        return values[n - 1];
    }
    let k = levels.partition_point(|&l| l <= u);
    let (l0, l1) = (levels[k - 1], levels[k]);
    let w = F::of((u - l0) / (l1 - l0));
    values[k - 1] + (values[k] - values[k - 1]) * w
}
