//! Scores, k-fold cross-validation, hyperparameter grids and the model
//! comparison.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Dataset, FeatureError, Scaler, TargetKind};
use crate::matrix::Matrix;
use crate::models::{
    adaboost_fit, forest_fit, ols_fit, tree_fit, AdaBoostParams, BoostLoss, ForestParams, Model, ModelError, Regressor,
    TreeParams,
};
use crate::seed::{derive_seed, derived_rng, rng_from, shuffle, Stream};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("target has zero variance, R² is undefined")]
    ZeroVarianceTarget,
    #[error("prediction and target lengths differ or are empty ({targets} targets, {predictions} predictions)")]
    LengthMismatch { targets: usize, predictions: usize },
    #[error("{rows} rows cannot be split into {k} folds")]
    TooFewRows { rows: usize, k: usize },
    #[error("need at least 2 folds, got {0}")]
    InvalidFolds(usize),
    #[error("fold {fold}: {source}")]
    Fit {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("grid: {0}")]
    InvalidGrid(String),
    #[error("grid has {got} cells, expected {expected}")]
    IncompleteGrid { expected: usize, got: usize },
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub r_squared: f64,
    pub mse: f64,
    /// Mean error `mean(y_hat - y)`.
    pub bias: f64,
    /// Population variance of the errors.
    pub variance: f64,
}

struct ErrorMoments {
    mse: f64,
    bias: f64,
    variance: f64,
}

fn error_moments(y: &[f64], y_hat: &[f64]) -> ErrorMoments {
    let n = y.len() as f64;
    let bias = y.iter().zip(y_hat).map(|(t, p)| p - t).sum::<f64>() / n;
    let mut mse = 0.0;
    let mut variance = 0.0;
    for (t, p) in y.iter().zip(y_hat) {
        let e = p - t;
        mse += e * e;
        variance += (e - bias) * (e - bias);
    }
    ErrorMoments {
        mse: mse / n,
        bias,
        variance: variance / n,
    }
}

fn r_squared(y: &[f64], y_hat: &[f64]) -> Option<f64> {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot <= 0.0 {
        return None;
    }
    let ss_res: f64 = y.iter().zip(y_hat).map(|(t, p)| (t - p) * (t - p)).sum();
    Some(1.0 - ss_res / ss_tot)
}

fn check_lengths(y: &[f64], y_hat: &[f64]) -> Result<(), EvalError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(EvalError::LengthMismatch {
            targets: y.len(),
            predictions: y_hat.len(),
        });
    }
    Ok(())
}

pub fn score(y: &[f64], y_hat: &[f64]) -> Result<ScoreSet, EvalError> {
    check_lengths(y, y_hat)?;
    let r_squared = r_squared(y, y_hat).ok_or(EvalError::ZeroVarianceTarget)?;
    let m = error_moments(y, y_hat);
    Ok(ScoreSet {
        r_squared,
        mse: m.mse,
        bias: m.bias,
        variance: m.variance,
    })
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds; the first `n % k`
/// folds hold one extra row.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFolds(k));
    }
    if n < k {
        return Err(EvalError::TooFewRows { rows: n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut derived_rng(seed, Stream::Folds, 0), &mut order);
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ols,
    Dt,
    Rf,
    RfAdaboost,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ols => "ols",
            Algorithm::Dt => "dt",
            Algorithm::Rf => "rf",
            Algorithm::RfAdaboost => "rf_adaboost",
        }
    }

    /// Whether the algorithm has a number-of-estimators axis.
    pub fn is_ensemble(self) -> bool {
        matches!(self, Algorithm::Rf | Algorithm::RfAdaboost)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ols" => Ok(Algorithm::Ols),
            "dt" => Ok(Algorithm::Dt),
            "rf" => Ok(Algorithm::Rf),
            "rf_adaboost" => Ok(Algorithm::RfAdaboost),
            _ => Err(format!("unknown algorithm {s:?} (expected ols, dt, rf or rf_adaboost)")),
        }
    }
}

/// An algorithm with its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub algorithm: Algorithm,
    /// `None` grows trees until pure.
    pub max_depth: Option<usize>,
    pub n_estimators: usize,
    #[serde(default)]
    pub loss: BoostLoss,
}

impl ModelSpec {
    pub fn new(algorithm: Algorithm, max_depth: Option<usize>, n_estimators: usize) -> Self {
        ModelSpec {
            algorithm,
            max_depth,
            n_estimators,
            loss: BoostLoss::default(),
        }
    }

    pub fn ols() -> Self {
        ModelSpec::new(Algorithm::Ols, None, 1)
    }
}

pub fn fit_model(spec: &ModelSpec, x: &Matrix, y: &[f64], seed: u64) -> Result<Model, ModelError> {
    Ok(match spec.algorithm {
        Algorithm::Ols => Model::Linear(ols_fit(x, y)?),
        Algorithm::Dt => {
            let params = TreeParams {
                max_depth: spec.max_depth,
                ..TreeParams::default()
            };
            Model::Tree(tree_fit(x, y, params, &mut rng_from(seed))?)
        }
        Algorithm::Rf => Model::Ensemble(forest_fit(
            x,
            y,
            ForestParams::new(spec.n_estimators, spec.max_depth),
            seed,
        )?),
        Algorithm::RfAdaboost => {
            let params = AdaBoostParams {
                loss: spec.loss,
                ..AdaBoostParams::new(spec.n_estimators, spec.max_depth)
            };
            Model::Ensemble(adaboost_fit(x, y, params, seed)?)
        }
    })
}

/// A model fitted on scaled features, with the scaler it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub target_kind: TargetKind,
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub model: Model,
}

impl TrainedModel {
    /// Predictions for raw (unscaled) feature rows.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>, EvalError> {
        let scaled = self.scaler.transform(x)?;
        Ok(self.model.predict(&scaled)?)
    }
}

/// Fits on the whole dataset; the scaler is fit on the same rows.
pub fn train(spec: &ModelSpec, dataset: &Dataset, seed: u64) -> Result<TrainedModel, EvalError> {
    let scaler = Scaler::fit(&dataset.feature_names, &dataset.x);
    let x = scaler.transform(&dataset.x)?;
    let model = fit_model(spec, &x, &dataset.targets, derive_seed(seed, Stream::Fit, u64::MAX))?;
    Ok(TrainedModel {
        spec: *spec,
        target_kind: dataset.target_kind,
        feature_names: dataset.feature_names.clone(),
        scaler,
        model,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: usize,
    pub rows: usize,
    /// `None` when the held-out targets are constant.
    pub r_squared: Option<f64>,
    pub mse: f64,
    pub bias: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<FoldScore>,
    pub mean: ScoreSet,
    /// Out-of-fold prediction for every dataset row.
    pub predictions: Vec<f64>,
}

/// Training and held-out parts of one fold, scaled with a scaler fit on the
/// training rows only.
struct FoldData {
    x_train: Matrix,
    y_train: Vec<f64>,
    x_test: Matrix,
}

fn fold_data(dataset: &Dataset, folds: &[Vec<usize>], f: usize) -> Result<FoldData, EvalError> {
    let train: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(g, _)| *g != f)
        .flat_map(|(_, rows)| rows.iter().copied())
        .collect();
    let x_train = dataset.x.select_rows(&train);
    let scaler = Scaler::fit(&dataset.feature_names, &x_train);
    Ok(FoldData {
        x_train: scaler.transform(&x_train)?,
        y_train: train.iter().map(|&i| dataset.targets[i]).collect(),
        x_test: scaler.transform(&dataset.x.select_rows(&folds[f]))?,
    })
}

fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, Stream::Fit, fold as u64)
}

/// Averages fold scores. R² averages the folds where it is defined and falls
/// back to the pooled out-of-fold R² when no fold defines it (e.g. leave-one-
/// out). The mean variance is `mean mse - mean bias²`, so the mean score
/// keeps `mse = bias² + variance`.
fn summarize(
    dataset: &Dataset,
    folds: &[Vec<usize>],
    fold_predictions: &[Vec<f64>],
) -> Result<(Vec<FoldScore>, ScoreSet, Vec<f64>), EvalError> {
    let mut oof = vec![0.0; dataset.len()];
    let mut scores = Vec::with_capacity(folds.len());
    for (f, (rows, pred)) in folds.iter().zip(fold_predictions).enumerate() {
        let y: Vec<f64> = rows.iter().map(|&i| dataset.targets[i]).collect();
        for (&i, &p) in rows.iter().zip(pred) {
            oof[i] = p;
        }
        let m = error_moments(&y, pred);
        scores.push(FoldScore {
            fold: f,
            rows: rows.len(),
            r_squared: r_squared(&y, pred),
            mse: m.mse,
            bias: m.bias,
            variance: m.variance,
        });
    }
    let k = scores.len() as f64;
    let defined: Vec<f64> = scores.iter().filter_map(|s| s.r_squared).collect();
    let r2 = if defined.is_empty() {
        r_squared(&dataset.targets, &oof).ok_or(EvalError::ZeroVarianceTarget)?
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let mse = scores.iter().map(|s| s.mse).sum::<f64>() / k;
    let bias = scores.iter().map(|s| s.bias).sum::<f64>() / k;
    let mean = ScoreSet {
        r_squared: r2,
        mse,
        bias,
        variance: (mse - bias * bias).max(0.0),
    };
    Ok((scores, mean, oof))
}

pub fn cross_validate(spec: &ModelSpec, dataset: &Dataset, k: usize, seed: u64) -> Result<CvResult, EvalError> {
    let folds = kfold(dataset.len(), k, seed)?;
    let fold_predictions = (0..folds.len())
        .into_par_iter()
        .map(|f| {
            let data = fold_data(dataset, &folds, f)?;
            let model = fit_model(spec, &data.x_train, &data.y_train, fold_seed(seed, f))
                .map_err(|source| EvalError::Fit { fold: f, source })?;
            Ok(model.predict(&data.x_test)?)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let (folds, mean, predictions) = summarize(dataset, &folds, &fold_predictions)?;
    Ok(CvResult {
        folds,
        mean,
        predictions,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridRanges {
    pub depths: Vec<usize>,
    pub estimators: Vec<usize>,
}

impl Default for GridRanges {
    fn default() -> Self {
        GridRanges {
            depths: (1..=20).collect(),
            estimators: (1..=20).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub depth: usize,
    pub estimators: usize,
    pub score: ScoreSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub algorithm: Algorithm,
    pub depths: Vec<usize>,
    /// `[1]` for the depth-only tree grid.
    pub estimators: Vec<usize>,
    /// Depth-major: all estimator counts of the first depth, then the next.
    pub cells: Vec<GridCell>,
    pub best: GridCell,
}

impl GridResult {
    pub fn expected_cells(&self) -> usize {
        self.depths.len() * self.estimators.len()
    }

    pub fn check_complete(&self) -> Result<(), EvalError> {
        if self.cells.len() != self.expected_cells() {
            return Err(EvalError::IncompleteGrid {
                expected: self.expected_cells(),
                got: self.cells.len(),
            });
        }
        Ok(())
    }

    pub fn best_spec(&self) -> ModelSpec {
        ModelSpec::new(self.algorithm, Some(self.best.depth), self.best.estimators)
    }
}

/// Orders cells by R² (higher first, undefined last), then lower MSE, then
/// fewer estimators, then smaller depth.
fn cell_order(a: &GridCell, b: &GridCell) -> std::cmp::Ordering {
    let key = |c: &GridCell| {
        if c.score.r_squared.is_nan() {
            f64::NEG_INFINITY
        } else {
            c.score.r_squared
        }
    };
    key(b)
        .total_cmp(&key(a))
        .then(a.score.mse.total_cmp(&b.score.mse))
        .then(a.estimators.cmp(&b.estimators))
        .then(a.depth.cmp(&b.depth))
}

pub fn best_cell(cells: &[GridCell]) -> Option<GridCell> {
    cells.iter().copied().min_by(cell_order)
}

/// Cross-validates every (depth, estimators) cell. Ensembles are fit once per
/// (depth, fold) with the largest estimator count; smaller counts are read off
/// as prefixes of that fit, which equal separate fits with the same seed.
pub fn grid_search(
    algorithm: Algorithm,
    dataset: &Dataset,
    ranges: &GridRanges,
    k: usize,
    seed: u64,
) -> Result<GridResult, EvalError> {
    if algorithm == Algorithm::Ols {
        return Err(EvalError::InvalidGrid("ols has no hyperparameters".into()));
    }
    let estimators = if algorithm.is_ensemble() {
        ranges.estimators.clone()
    } else {
        vec![1]
    };
    if ranges.depths.is_empty() || estimators.is_empty() {
        return Err(EvalError::InvalidGrid("empty range".into()));
    }
    if ranges.depths.contains(&0) || estimators.contains(&0) {
        return Err(EvalError::InvalidGrid("depths and estimator counts start at 1".into()));
    }
    let max_estimators = *estimators.iter().max().expect("nonempty");
    let folds = kfold(dataset.len(), k, seed)?;
    let fold_data: Vec<FoldData> = (0..folds.len())
        .map(|f| fold_data(dataset, &folds, f))
        .collect::<Result<_, _>>()?;

    let items: Vec<(usize, usize)> = ranges
        .depths
        .iter()
        .flat_map(|&d| (0..folds.len()).map(move |f| (d, f)))
        .collect();
    // per item: predictions on the held-out fold for each estimator count
    let staged: Vec<Vec<Vec<f64>>> = items
        .par_iter()
        .map(|&(depth, f)| {
            let data = &fold_data[f];
            let spec = ModelSpec::new(algorithm, Some(depth), max_estimators);
            let model = fit_model(&spec, &data.x_train, &data.y_train, fold_seed(seed, f))
                .map_err(|source| EvalError::Fit { fold: f, source })?;
            Ok(match model {
                Model::Ensemble(e) => {
                    let stages = e.staged_predict(&data.x_test)?;
                    estimators
                        .iter()
                        .map(|&m| stages[m.min(stages.len()) - 1].clone())
                        .collect()
                }
                other => vec![other.predict(&data.x_test)?],
            })
        })
        .collect::<Result<_, EvalError>>()?;

    let mut cells = Vec::with_capacity(ranges.depths.len() * estimators.len());
    for (di, &depth) in ranges.depths.iter().enumerate() {
        let per_fold = &staged[di * folds.len()..(di + 1) * folds.len()];
        for (ei, &m) in estimators.iter().enumerate() {
            let predictions: Vec<Vec<f64>> = per_fold.iter().map(|p| p[ei].clone()).collect();
            let (_, score, _) = summarize(dataset, &folds, &predictions)?;
            cells.push(GridCell {
                depth,
                estimators: m,
                score,
            });
        }
    }
    let best = best_cell(&cells).expect("nonempty grid");
    Ok(GridResult {
        algorithm,
        depths: ranges.depths.clone(),
        estimators,
        cells,
        best,
    })
}

pub const GRID_HEADER: [&str; 7] = [
    "algorithm",
    "depth",
    "estimators",
    "mean_r2",
    "mean_mse",
    "bias",
    "variance",
];

/// Long-format grid CSV, one row per cell.
pub fn write_grid_csv<W: Write>(writer: W, grid: &GridResult) -> Result<(), EvalError> {
    grid.check_complete()?;
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(GRID_HEADER)?;
    for c in &grid.cells {
        csv.write_record([
            grid.algorithm.as_str().to_string(),
            c.depth.to_string(),
            c.estimators.to_string(),
            c.score.r_squared.to_string(),
            c.score.mse.to_string(),
            c.score.bias.to_string(),
            c.score.variance.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Reads cells written by [`write_grid_csv`]; `#` lines are skipped.
pub fn read_grid_csv<R: Read>(reader: R) -> Result<Vec<(Algorithm, GridCell)>, EvalError> {
    let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
    let mut cells = Vec::new();
    for record in csv.records() {
        let record = record?;
        let field = |j: usize| record.get(j).unwrap_or("").trim().to_string();
        let bad = |j: usize| EvalError::InvalidGrid(format!("bad value {:?} in column {}", field(j), GRID_HEADER[j]));
        let algorithm: Algorithm = field(0).parse().map_err(EvalError::InvalidGrid)?;
        let int = |j: usize| field(j).parse::<usize>().map_err(|_| bad(j));
        let real = |j: usize| field(j).parse::<f64>().map_err(|_| bad(j));
        cells.push((
            algorithm,
            GridCell {
                depth: int(1)?,
                estimators: int(2)?,
                score: ScoreSet {
                    r_squared: real(3)?,
                    mse: real(4)?,
                    bias: real(5)?,
                    variance: real(6)?,
                },
            },
        ));
    }
    Ok(cells)
}

/// One line of the algorithm comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algorithm: Algorithm,
    pub target: TargetKind,
    pub r_squared: f64,
    pub mse: f64,
    pub depth: Option<usize>,
    pub estimators: Option<usize>,
}

impl ComparisonRow {
    pub fn from_grid(grid: &GridResult, target: TargetKind) -> Self {
        ComparisonRow {
            algorithm: grid.algorithm,
            target,
            r_squared: grid.best.score.r_squared,
            mse: grid.best.score.mse,
            depth: Some(grid.best.depth),
            estimators: grid.algorithm.is_ensemble().then_some(grid.best.estimators),
        }
    }

    pub fn from_cv(algorithm: Algorithm, cv: &CvResult, target: TargetKind) -> Self {
        ComparisonRow {
            algorithm,
            target,
            r_squared: cv.mean.r_squared,
            mse: cv.mean.mse,
            depth: None,
            estimators: None,
        }
    }
}

/// Rows grouped by target (in first-appearance order), each group ranked by
/// R² descending.
pub fn select_best(rows: Vec<ComparisonRow>) -> Vec<ComparisonRow> {
    let mut targets: Vec<TargetKind> = Vec::new();
    for r in &rows {
        if !targets.contains(&r.target) {
            targets.push(r.target);
        }
    }
    let mut ranked = rows;
    ranked.sort_by(|a, b| {
        let ta = targets.iter().position(|t| *t == a.target);
        let tb = targets.iter().position(|t| *t == b.target);
        ta.cmp(&tb).then(b.r_squared.total_cmp(&a.r_squared))
    });
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn perfect_and_mean_predictions() {
        let s = score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.r_squared, s.mse, s.bias, s.variance), (1.0, 0.0, 0.0, 0.0));
        let s = score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(s.r_squared, 0.0);
        assert!((s.mse - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.bias, 0.0);
        assert!((s.variance - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            score(&[2.0, 2.0], &[1.0, 3.0]),
            Err(EvalError::ZeroVarianceTarget)
        ));
        assert!(matches!(score(&[], &[]), Err(EvalError::LengthMismatch { .. })));
    }

    proptest! {
        #[test]
        fn mse_decomposes(errors in prop::collection::vec(-1e3f64..1e3, 1..200)) {
            let y: Vec<f64> = (0..errors.len()).map(|i| i as f64).collect();
            let y_hat: Vec<f64> = y.iter().zip(&errors).map(|(t, e)| t + e).collect();
            let m = error_moments(&y, &y_hat);
            prop_assert!((m.mse - (m.bias * m.bias + m.variance)).abs() <= 1e-12 * m.mse.max(1.0));
            prop_assert!(m.variance >= 0.0);
        }

        #[test]
        fn folds_partition_rows(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let folds = kfold(n, k, seed).unwrap();
            prop_assert_eq!(folds.len(), k);
            let mut all: Vec<usize> = folds.iter().flatten().copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn fold_sizes() {
        let sizes: Vec<usize> = kfold(24, 10, 1).unwrap().iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 3, 2, 2, 2, 2, 2, 2]);
        assert!(kfold(10, 10, 1).unwrap().iter().all(|f| f.len() == 1));
        assert_eq!(kfold(30, 10, 9).unwrap(), kfold(30, 10, 9).unwrap());
        assert_ne!(kfold(30, 10, 9).unwrap(), kfold(30, 10, 10).unwrap());
        assert!(matches!(kfold(5, 10, 1), Err(EvalError::TooFewRows { rows: 5, k: 10 })));
        assert!(matches!(kfold(5, 1, 1), Err(EvalError::InvalidFolds(1))));
    }

    pub(crate) fn dataset(rows: Vec<Vec<f64>>, targets: Vec<f64>) -> Dataset {
        let d = rows[0].len();
        Dataset {
            feature_names: (0..d).map(|j| format!("f{j}")).collect(),
            x: Matrix::from_rows(&rows),
            targets,
            target_kind: TargetKind::Count,
            keys: Vec::new(),
        }
    }

    fn step_dataset(n: usize, seed: u64, noise: f64) -> Dataset {
        let mut rng = rng_from(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.gen();
            let b: f64 = rng.gen();
            rows.push(vec![a, b]);
            y.push(if a > 0.5 && b > 0.5 { 10.0 } else { 0.0 } + noise * rng.gen::<f64>());
        }
        dataset(rows, y)
    }

    #[test]
    fn linear_data_cv_is_exact() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, ((i * 7) % 11) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] - 2.0 * r[1] + 5.0).collect();
        let cv = cross_validate(&ModelSpec::ols(), &dataset(rows, y), 10, 4).unwrap();
        assert!((cv.mean.r_squared - 1.0).abs() < 1e-8);
        assert_eq!(cv.folds.len(), 10);
    }

    #[test]
    fn leave_one_out_reports_every_fold() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64]).collect();
        let y: Vec<f64> = (0..12).map(|i| (i * i) as f64).collect();
        let cv = cross_validate(
            &ModelSpec::new(Algorithm::Dt, Some(3), 1),
            &dataset(rows, y.clone()),
            12,
            0,
        )
        .unwrap();
        assert_eq!(cv.folds.len(), 12);
        assert!(cv.folds.iter().all(|f| f.r_squared.is_none() && f.rows == 1));
        let pooled = score(&y, &cv.predictions).unwrap();
        assert_eq!(cv.mean.r_squared, pooled.r_squared);
    }

    #[test]
    fn mean_score_keeps_decomposition() {
        let cv = cross_validate(
            &ModelSpec::new(Algorithm::Rf, Some(3), 5),
            &step_dataset(80, 2, 3.0),
            10,
            7,
        )
        .unwrap();
        let m = cv.mean;
        assert!((m.mse - (m.bias * m.bias + m.variance)).abs() < 1e-12 * m.mse.max(1.0));
    }

    #[test]
    fn held_out_targets_do_not_reach_the_fit() {
        let ds = step_dataset(60, 1, 1.0);
        let spec = ModelSpec::new(Algorithm::RfAdaboost, Some(2), 4);
        let folds = kfold(ds.len(), 5, 3).unwrap();
        let a = fold_data(&ds, &folds, 0).unwrap();
        let mut corrupted = ds.clone();
        for &i in &folds[0] {
            corrupted.targets[i] = 1e6;
        }
        let b = fold_data(&corrupted, &folds, 0).unwrap();
        let ma = fit_model(&spec, &a.x_train, &a.y_train, 9).unwrap();
        let mb = fit_model(&spec, &b.x_train, &b.y_train, 9).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn grid_cells_match_direct_cross_validation() {
        let ds = step_dataset(60, 5, 2.0);
        let ranges = GridRanges {
            depths: vec![1, 2, 3],
            estimators: vec![1, 2, 5],
        };
        for algorithm in [Algorithm::Rf, Algorithm::RfAdaboost, Algorithm::Dt] {
            let grid = grid_search(algorithm, &ds, &ranges, 5, 11).unwrap();
            let expected = if algorithm.is_ensemble() { 9 } else { 3 };
            assert_eq!(grid.cells.len(), expected);
            grid.check_complete().unwrap();
            for cell in &grid.cells {
                let spec = ModelSpec::new(algorithm, Some(cell.depth), cell.estimators);
                let cv = cross_validate(&spec, &ds, 5, 11).unwrap();
                assert_eq!(cv.mean, cell.score, "{algorithm} {cell:?}");
            }
            let rescan = best_cell(&grid.cells).unwrap();
            assert_eq!(rescan, grid.best);
        }
    }

    #[test]
    fn full_default_grid_shape() {
        let ds = step_dataset(40, 3, 1.0);
        let grid = grid_search(Algorithm::RfAdaboost, &ds, &GridRanges::default(), 4, 0).unwrap();
        assert_eq!(grid.cells.len(), 400);
        let dt = grid_search(Algorithm::Dt, &ds, &GridRanges::default(), 4, 0).unwrap();
        assert_eq!(dt.cells.len(), 20);
        assert!(matches!(
            grid_search(Algorithm::Ols, &ds, &GridRanges::default(), 4, 0),
            Err(EvalError::InvalidGrid(_))
        ));
    }

    fn cell(depth: usize, estimators: usize, r2: f64, mse: f64) -> GridCell {
        GridCell {
            depth,
            estimators,
            score: ScoreSet {
                r_squared: r2,
                mse,
                bias: 0.0,
                variance: mse,
            },
        }
    }

    #[test]
    fn best_cell_tie_breaks() {
        let cells = [
            cell(3, 4, 0.5, 2.0),
            cell(2, 4, 0.5, 1.0),
            cell(1, 6, 0.5, 1.0),
            cell(9, 9, f64::NAN, 0.0),
        ];
        assert_eq!(best_cell(&cells).unwrap(), cells[1]);
        let cells = [cell(3, 4, 0.5, 1.0), cell(2, 4, 0.5, 1.0)];
        assert_eq!(best_cell(&cells).unwrap().depth, 2);
        // adding a worse cell never changes the choice
        let mut more = cells.to_vec();
        more.push(cell(1, 1, 0.4, 0.1));
        assert_eq!(best_cell(&more), best_cell(&cells));
    }

    #[test]
    fn grid_csv_round_trip_reproduces_best() {
        let ds = step_dataset(50, 8, 2.0);
        let ranges = GridRanges {
            depths: vec![1, 2, 4],
            estimators: vec![1, 3],
        };
        let grid = grid_search(Algorithm::Rf, &ds, &ranges, 5, 2).unwrap();
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, &grid).unwrap();
        assert!(
            String::from_utf8_lossy(&buf).starts_with("algorithm,depth,estimators,mean_r2,mean_mse,bias,variance\n")
        );
        let cells: Vec<GridCell> = read_grid_csv(&buf[..]).unwrap().into_iter().map(|(_, c)| c).collect();
        assert_eq!(cells, grid.cells);
        assert_eq!(best_cell(&cells).unwrap(), grid.best);

        let mut partial = grid.clone();
        partial.cells.pop();
        assert!(matches!(
            write_grid_csv(Vec::new(), &partial),
            Err(EvalError::IncompleteGrid { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn comparison_ranks_within_target() {
        let row = |algorithm, target, r2| ComparisonRow {
            algorithm,
            target,
            r_squared: r2,
            mse: 1.0,
            depth: None,
            estimators: None,
        };
        let ranked = select_best(vec![
            row(Algorithm::Ols, TargetKind::Count, 0.2),
            row(Algorithm::Dt, TargetKind::Count, 0.62),
            row(Algorithm::RfAdaboost, TargetKind::Count, 0.65),
            row(Algorithm::Ols, TargetKind::LogRatio, 0.17),
            row(Algorithm::RfAdaboost, TargetKind::LogRatio, 0.67),
        ]);
        let order: Vec<(Algorithm, TargetKind)> = ranked.iter().map(|r| (r.algorithm, r.target)).collect();
        assert_eq!(
            order,
            vec![
                (Algorithm::RfAdaboost, TargetKind::Count),
                (Algorithm::Dt, TargetKind::Count),
                (Algorithm::Ols, TargetKind::Count),
                (Algorithm::RfAdaboost, TargetKind::LogRatio),
                (Algorithm::Ols, TargetKind::LogRatio),
            ]
        );
    }

    #[test]
    fn trained_model_scales_inputs() {
        let ds = step_dataset(40, 4, 0.0);
        let trained = train(&ModelSpec::new(Algorithm::Dt, None, 1), &ds, 1).unwrap();
        let pred = trained.predict(&ds.x).unwrap();
        assert_eq!(pred, ds.targets);
        let json = serde_json::to_string(&trained).unwrap();
        let back: TrainedModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.predict(&ds.x).unwrap(), pred);
    }
}
