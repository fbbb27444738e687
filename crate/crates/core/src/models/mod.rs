//! Regression engines written from scratch: ordinary least squares, CART
//! regression trees, bootstrap forests and AdaBoost.R2.

mod ensemble;
mod linear;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use ensemble::{
    adaboost_fit, forest_fit, weighted_median, AdaBoostParams, BoostLoss, BoostStop, Combine, EnsembleModel,
    ForestParams, MaxFeatures,
};
pub use linear::{ols_fit, LinearModel, RIDGE_LAMBDA, SINGULAR_TOLERANCE};
pub use tree::{tree_fit, tree_fit_sample, RegressionTree, TreeNode, TreeParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("need at least {needed} rows for {cols} features, got {rows}")]
    InsufficientRows { rows: usize, cols: usize, needed: usize },
    #[error("expected rows of width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("targets length {targets} does not match {rows} rows")]
    TargetLength { rows: usize, targets: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("normal equations remain singular after ridge fallback")]
    Singular,
}

pub(crate) fn check_training_shape(x: &Matrix, y: &[f64]) -> Result<(), ModelError> {
    if x.rows() != y.len() {
        return Err(ModelError::TargetLength {
            rows: x.rows(),
            targets: y.len(),
        });
    }
    if x.rows() == 0 {
        return Err(ModelError::InsufficientRows {
            rows: 0,
            cols: x.cols(),
            needed: 1,
        });
    }
    Ok(())
}

pub trait Regressor {
    fn n_features(&self) -> usize;

    /// Prediction for one row; the caller guarantees the row width.
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, x: &Matrix) -> Result<Vec<f64>, ModelError> {
        if x.cols() != self.n_features() {
            return Err(ModelError::DimensionMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        Ok(x.iter_rows().map(|row| self.predict_row(row)).collect())
    }
}

/// Any fitted model, in its persisted JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Tree(RegressionTree),
    Ensemble(EnsembleModel),
}

impl Regressor for Model {
    fn n_features(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_features(),
            Model::Tree(m) => m.n_features(),
            Model::Ensemble(m) => m.n_features(),
        }
    }

    fn predict_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Linear(m) => m.predict_row(row),
            Model::Tree(m) => m.predict_row(row),
            Model::Ensemble(m) => m.predict_row(row),
        }
    }
}

pub fn predict(model: &impl Regressor, rows: &Matrix) -> Result<Vec<f64>, ModelError> {
    model.predict(rows)
}
