use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{tree_fit_sample, RegressionTree, TreeParams};
use super::{check_training_shape, ModelError, Regressor};
use crate::matrix::Matrix;
use crate::seed::{derived_rng, uniform_index, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    Mean,
    WeightedMedian,
}

/// Why boosting ended before reaching the configured estimator count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum BoostStop {
    /// The learner of this round had zero training loss; it is kept.
    PerfectFit { round: usize },
    /// The learner of this round had average loss >= 0.5; it is discarded
    /// unless it is the first.
    LossTooHigh { round: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub weights: Vec<f64>,
    pub combine: Combine,
    pub trees: Vec<RegressionTree>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stopped: Option<BoostStop>,
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    /// The first boosting round already fit the training data exactly.
    pub fn degenerate_first_round(&self) -> bool {
        matches!(self.stopped, Some(BoostStop::PerfectFit { round: 1 }))
    }

    fn combine_prefix(&self, predictions: &[f64], scratch: &mut Vec<(f64, f64)>) -> f64 {
        match self.combine {
            Combine::Mean => predictions.iter().sum::<f64>() / predictions.len() as f64,
            Combine::WeightedMedian => {
                scratch.clear();
                scratch.extend(predictions.iter().copied().zip(self.weights.iter().copied()));
                weighted_median_in_place(scratch)
            }
        }
    }

    /// Predictions of every prefix of the ensemble: entry `m - 1` holds the
    /// predictions of the first `m` trees. Boosting and bagging fits are
    /// sequential in the tree index, so a prefix is exactly the model that
    /// would have been fit with `m` estimators and the same seed.
    pub fn staged_predict(&self, x: &Matrix) -> Result<Vec<Vec<f64>>, ModelError> {
        if x.cols() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        let m = self.trees.len();
        let mut stages = vec![Vec::with_capacity(x.rows()); m];
        let mut per_tree = vec![0.0; m];
        let mut scratch = Vec::with_capacity(m);
        for row in x.iter_rows() {
            for (p, tree) in per_tree.iter_mut().zip(&self.trees) {
                *p = tree.predict_row(row);
            }
            for (k, stage) in stages.iter_mut().enumerate() {
                stage.push(self.combine_prefix(&per_tree[..=k], &mut scratch));
            }
        }
        Ok(stages)
    }
}

impl Regressor for EnsembleModel {
    fn n_features(&self) -> usize {
        self.trees.first().map_or(0, |t| t.n_features)
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        let predictions: Vec<f64> = self.trees.iter().map(|t| t.predict_row(row)).collect();
        self.combine_prefix(&predictions, &mut Vec::with_capacity(predictions.len()))
    }
}

fn weighted_median_in_place(pairs: &mut [(f64, f64)]) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut cumulative = 0.0;
    for &(value, weight) in pairs.iter() {
        cumulative += weight;
        if cumulative >= 0.5 * total {
            return value;
        }
    }
    pairs.last().map_or(f64::NAN, |p| p.0)
}

/// Smallest value whose cumulative weight (in sorted order) reaches half of
/// the total weight.
pub fn weighted_median(values: &[f64], weights: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(weights.iter().copied()).collect();
    weighted_median_in_place(&mut pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    /// `ceil(sqrt(d))`
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    fn resolve(self, d: usize) -> Option<usize> {
        match self {
            MaxFeatures::All => None,
            MaxFeatures::Sqrt => Some(((d as f64).sqrt().ceil() as usize).max(1)),
            MaxFeatures::Count(k) => Some(k.clamp(1, d.max(1))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl ForestParams {
    pub fn new(n_estimators: usize, max_depth: Option<usize>) -> Self {
        ForestParams {
            n_estimators,
            max_depth,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

/// Bagged forest. Tree `i` draws its bootstrap sample and feature subsets
/// from its own stream derived from `(seed, i)`, so trees are built in
/// parallel without affecting the result.
pub fn forest_fit(x: &Matrix, y: &[f64], params: ForestParams, seed: u64) -> Result<EnsembleModel, ModelError> {
    check_training_shape(x, y)?;
    if params.n_estimators == 0 {
        return Err(ModelError::InvalidParameter("n_estimators must be at least 1".into()));
    }
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.max_features.resolve(x.cols()),
    };
    let n = x.rows();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(seed, Stream::Tree, i as u64);
            let sample: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| uniform_index(&mut rng, n)).collect()
            } else {
                (0..n).collect()
            };
            tree_fit_sample(x, y, &sample, tree_params, &mut rng)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EnsembleModel {
        weights: vec![1.0; trees.len()],
        combine: Combine::Mean,
        trees,
        seed,
        stopped: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostLoss {
    #[default]
    Linear,
    Square,
    Exponential,
}

impl BoostLoss {
    fn apply(self, normalized_error: f64) -> f64 {
        match self {
            BoostLoss::Linear => normalized_error,
            BoostLoss::Square => normalized_error * normalized_error,
            BoostLoss::Exponential => 1.0 - libm::exp(-normalized_error),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaBoostParams {
    pub n_estimators: usize,
    pub max_depth: Option<usize>,
    pub loss: BoostLoss,
    /// Per-split feature budget of the base trees.
    pub max_features: MaxFeatures,
}

impl AdaBoostParams {
    pub fn new(n_estimators: usize, max_depth: Option<usize>) -> Self {
        AdaBoostParams {
            n_estimators,
            max_depth,
            loss: BoostLoss::Linear,
            max_features: MaxFeatures::All,
        }
    }
}

/// Draws `n` indices with replacement, proportionally to `weights`
/// (normalized, cumulative form).
fn weighted_bootstrap<R: Rng>(cumulative: &[f64], rng: &mut R) -> Vec<usize> {
    let n = cumulative.len();
    let total = cumulative[n - 1];
    (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            cumulative.partition_point(|c| *c <= u).min(n - 1)
        })
        .collect()
}

/// AdaBoost.R2 with regression-tree base learners. Example weights are
/// realized by weighted bootstrap resampling; the ensemble predicts the
/// weighted median of its learners with weights `ln(1 / beta)`.
pub fn adaboost_fit(x: &Matrix, y: &[f64], params: AdaBoostParams, seed: u64) -> Result<EnsembleModel, ModelError> {
    check_training_shape(x, y)?;
    if params.n_estimators == 0 {
        return Err(ModelError::InvalidParameter("n_estimators must be at least 1".into()));
    }
    let n = x.rows();
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        max_features: params.max_features.resolve(x.cols()),
        ..TreeParams::default()
    };
    let mut rng = derived_rng(seed, Stream::Boost, 0);
    let mut sample_weights = vec![1.0 / n as f64; n];
    let mut cumulative = vec![0.0; n];
    let mut trees = Vec::new();
    let mut weights = Vec::new();
    let mut stopped = None;

    for round in 1..=params.n_estimators {
        let mut acc = 0.0;
        for (c, w) in cumulative.iter_mut().zip(&sample_weights) {
            acc += w;
            *c = acc;
        }
        let sample = weighted_bootstrap(&cumulative, &mut rng);
        let tree = tree_fit_sample(x, y, &sample, tree_params, &mut rng)?;

        let errors: Vec<f64> = x
            .iter_rows()
            .zip(y)
            .map(|(row, t)| (tree.predict_row(row) - t).abs())
            .collect();
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        if max_error <= 0.0 {
            trees.push(tree);
            weights.push(1.0);
            stopped = Some(BoostStop::PerfectFit { round });
            break;
        }
        let losses: Vec<f64> = errors.iter().map(|e| params.loss.apply(e / max_error)).collect();
        let average_loss: f64 = losses.iter().zip(&sample_weights).map(|(l, w)| l * w).sum();
        if average_loss <= 0.0 {
            trees.push(tree);
            weights.push(1.0);
            stopped = Some(BoostStop::PerfectFit { round });
            break;
        }
        if average_loss >= 0.5 {
            if trees.is_empty() {
                trees.push(tree);
                weights.push(1.0);
            }
            stopped = Some(BoostStop::LossTooHigh { round });
            break;
        }
        let beta = average_loss / (1.0 - average_loss);
        trees.push(tree);
        weights.push(libm::log(1.0 / beta));

        for (w, l) in sample_weights.iter_mut().zip(&losses) {
            *w *= libm::pow(beta, 1.0 - l);
        }
        let total: f64 = sample_weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        sample_weights.iter_mut().for_each(|w| *w /= total);
    }

    Ok(EnsembleModel {
        weights,
        combine: Combine::WeightedMedian,
        trees,
        seed,
        stopped,
    })
}
