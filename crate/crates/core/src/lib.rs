//! Quantifying and predicting the impact of construction projects on urban
//! quality of life from 311 service requests.
//!
//! The pipeline runs in two phases. Pre-processing ([`ingest`], [`features`],
//! [`selection`]) turns raw request exports and a project table into monthly
//! complaint series, screens the complaint catalog down to
//! construction-related types and builds a normalized feature matrix.
//! Modeling ([`models`], [`evaluate`], [`report`]) fits and tunes regression
//! models with k-fold cross-validation and reports predicted against actual
//! complaint changes. [`synth`] generates inputs with planted effects whose
//! expected values are known in closed form.

pub mod domain;
pub mod evaluate;
pub mod features;
pub mod ingest;
pub mod matrix;
pub mod models;
pub mod report;
pub mod seed;
pub mod selection;
pub mod stats;
pub mod synth;

pub use matrix::Matrix;
