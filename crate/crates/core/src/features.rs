//! Monthly complaint counts, the count and log-ratio targets, the feature
//! matrix, min-max scaling and tree-based wrapper feature selection.

use std::collections::HashMap;
use std::io::{Read, Write};

use chrono::Datelike;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    expand_window, month_index, ComplaintCatalog, ConstructionProject, ServiceRequest, PRE_MONTHS, WINDOW_MONTHS,
};
use crate::matrix::Matrix;
use crate::models::{tree_fit, ModelError, TreeParams};
use crate::seed::rng_from;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("complaint ratio undefined: zero count with no smoothing")]
    UndefinedRatio,
    #[error("every dataset row was dropped")]
    EmptyDataset,
    #[error("no complaint types selected")]
    NoSelectedTypes,
    #[error("complaint type index {0} outside the catalog")]
    InvalidTypeIndex(usize),
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scaler has no column {0:?}")]
    UnknownColumn(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad dataset value {0:?}")]
    BadValue(String),
}

/// Monthly complaint counts of one type around one project; `counts[t - 1]`
/// is month `t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub project_id: u32,
    pub type_index: usize,
    pub counts: [u64; WINDOW_MONTHS],
}

impl MonthlySeries {
    pub fn pre(&self) -> &[u64] {
        &self.counts[..PRE_MONTHS]
    }

    pub fn post(&self) -> &[u64] {
        &self.counts[PRE_MONTHS..]
    }

    pub fn pre_mean(&self) -> f64 {
        self.pre().iter().sum::<u64>() as f64 / PRE_MONTHS as f64
    }
}

/// A project together with one series per catalog type, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectSeries {
    pub project: ConstructionProject,
    pub series: Vec<MonthlySeries>,
}

impl ProjectSeries {
    pub fn get(&self, type_index: usize) -> Option<&MonthlySeries> {
        type_index.checked_sub(1).and_then(|p| self.series.get(p))
    }

    /// Counts of every type at month `t`, in catalog order.
    pub fn counts_at(&self, t: usize) -> Vec<u64> {
        self.series.iter().map(|s| s.counts[t - 1]).collect()
    }
}

/// Monthly counts per catalog type for requests already filtered to the
/// project's zip and window. Types without requests get an all-zero series.
pub fn aggregate_monthly<'a, I>(
    requests: I,
    project: &ConstructionProject,
    catalog: &ComplaintCatalog,
) -> Vec<MonthlySeries>
where
    I: IntoIterator<Item = &'a ServiceRequest>,
{
    let window = expand_window(project);
    let mut series: Vec<MonthlySeries> = catalog
        .iter()
        .map(|(i, _)| MonthlySeries {
            project_id: project.id,
            type_index: i,
            counts: [0; WINDOW_MONTHS],
        })
        .collect();
    for request in requests {
        let (Some(i), Some(t)) = (
            catalog.index_of(&request.complaint_type),
            month_index(request.created_date, &window),
        ) else {
            continue;
        };
        series[i - 1].counts[t - 1] += 1;
    }
    series
}

/// Monthly series of every project, grouping requests by zip first.
pub fn project_series(
    requests: &[ServiceRequest],
    projects: &[ConstructionProject],
    catalog: &ComplaintCatalog,
) -> Vec<ProjectSeries> {
    let mut by_zip: HashMap<&str, Vec<&ServiceRequest>> = HashMap::new();
    for r in requests {
        by_zip.entry(r.incident_zip.as_str()).or_default().push(r);
    }
    projects
        .iter()
        .map(|p| {
            let local = by_zip.get(p.zip.as_str()).map_or(&[][..], Vec::as_slice);
            ProjectSeries {
                project: p.clone(),
                series: aggregate_monthly(local.iter().copied(), p, catalog),
            }
        })
        .collect()
}

/// `ln((C_i + alpha) / (sum_j (C_j + alpha) / I))` for the counts of all `I`
/// catalog types in one month; `i` is 1-based.
pub fn complaint_ratio(counts: &[u64], i: usize, alpha: f64) -> Result<f64, FeatureError> {
    let own = *i
        .checked_sub(1)
        .and_then(|p| counts.get(p))
        .ok_or(FeatureError::InvalidTypeIndex(i))? as f64;
    let numerator = own + alpha;
    if numerator <= 0.0 {
        return Err(FeatureError::UndefinedRatio);
    }
    let mean = counts.iter().map(|&c| c as f64 + alpha).sum::<f64>() / counts.len() as f64;
    Ok(libm::log(numerator / mean))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    Count,
    LogRatio,
}

impl TargetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TargetKind::Count => "count",
            TargetKind::LogRatio => "log_ratio",
        }
    }
}

impl std::str::FromStr for TargetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count" => Ok(TargetKind::Count),
            "log_ratio" | "ratio" => Ok(TargetKind::LogRatio),
            _ => Err(format!("unknown target kind {s:?} (expected count or log_ratio)")),
        }
    }
}

pub const FEATURE_NAMES: [&str; 8] = [
    "duration_months",
    "zip_code",
    "month_offset",
    "calendar_month",
    "complaint_type_index",
    "pre_mean",
    "pre_total",
    "pre_slope",
];

/// Identifies the (project, complaint type, month) behind a dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub project_id: u32,
    pub type_index: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub x: Matrix,
    pub targets: Vec<f64>,
    pub target_kind: TargetKind,
    /// Row provenance; empty for datasets read back from CSV.
    pub keys: Vec<RowKey>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            feature_names: self.feature_names.clone(),
            x: self.x.select_rows(rows),
            targets: rows.iter().map(|&i| self.targets[i]).collect(),
            target_kind: self.target_kind,
            keys: if self.keys.is_empty() {
                Vec::new()
            } else {
                rows.iter().map(|&i| self.keys[i]).collect()
            },
        }
    }

    /// Writes the feature columns followed by `target`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FeatureError> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = self.feature_names.clone();
        header.push("target".into());
        csv.write_record(&header)?;
        for (row, target) in self.x.iter_rows().zip(&self.targets) {
            csv.write_record(row.iter().chain(std::iter::once(target)).map(|v| v.to_string()))?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads a dataset written by [`Dataset::write_csv`]. Lines starting with
    /// `#` are metadata and skipped.
    pub fn read_csv<R: Read>(reader: R, target_kind: TargetKind) -> Result<Dataset, FeatureError> {
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(reader);
        let headers = csv.headers()?.clone();
        let width = headers.len();
        let has_target = headers.get(width.saturating_sub(1)) == Some("target");
        let n_features = if has_target { width - 1 } else { width };
        let feature_names: Vec<String> = headers.iter().take(n_features).map(String::from).collect();
        let mut data = Vec::new();
        let mut targets = Vec::new();
        for record in csv.records() {
            let record = record?;
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| FeatureError::BadValue(field.to_string()))?;
                if j < n_features {
                    data.push(v);
                } else {
                    targets.push(v);
                }
            }
        }
        let rows = data.len() / n_features.max(1);
        if !has_target {
            targets = vec![f64::NAN; rows];
        }
        Ok(Dataset {
            feature_names,
            x: Matrix::new(rows, n_features, data),
            targets,
            target_kind,
            keys: Vec::new(),
        })
    }
}

/// Ordinary least squares slope of counts against month index `1..=n`.
fn trend_slope(counts: &[u64]) -> f64 {
    let n = counts.len() as f64;
    let t_mean = (n + 1.0) / 2.0;
    let c_mean = counts.iter().sum::<u64>() as f64 / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &c) in counts.iter().enumerate() {
        let dt = (k + 1) as f64 - t_mean;
        sxy += dt * (c as f64 - c_mean);
        sxx += dt * dt;
    }
    sxy / sxx
}

/// One row per (project, selected type, post-start month) with a defined
/// target. Rows whose log ratio is undefined are dropped.
pub fn build_dataset(
    projects: &[ProjectSeries],
    selected: &[usize],
    target_kind: TargetKind,
    alpha: f64,
) -> Result<Dataset, FeatureError> {
    if selected.is_empty() {
        return Err(FeatureError::NoSelectedTypes);
    }
    let mut zips: Vec<&str> = projects.iter().map(|p| p.project.zip.as_str()).collect();
    zips.sort_unstable();
    zips.dedup();

    let mut data = Vec::new();
    let mut targets = Vec::new();
    let mut keys = Vec::new();
    for ps in projects {
        let project = &ps.project;
        let window = expand_window(project);
        let zip_code = zips.binary_search(&project.zip.as_str()).expect("zip collected above") as f64;
        for &i in selected {
            let series = ps.get(i).ok_or(FeatureError::InvalidTypeIndex(i))?;
            let pre_total = series.pre().iter().sum::<u64>() as f64;
            let pre_mean = pre_total / PRE_MONTHS as f64;
            let slope = trend_slope(series.pre());
            for t in PRE_MONTHS + 1..=WINDOW_MONTHS {
                let target = match target_kind {
                    TargetKind::Count => series.counts[t - 1] as f64,
                    TargetKind::LogRatio => match complaint_ratio(&ps.counts_at(t), i, alpha) {
                        Ok(y) => y,
                        Err(FeatureError::UndefinedRatio) => continue,
                        Err(e) => return Err(e),
                    },
                };
                let month_start = window.month(t).expect("t within window").0;
                data.extend_from_slice(&[
                    project.duration_months as f64,
                    zip_code,
                    (t - PRE_MONTHS) as f64,
                    month_start.month() as f64,
                    i as f64,
                    pre_mean,
                    pre_total,
                    slope,
                ]);
                targets.push(target);
                keys.push(RowKey {
                    project_id: project.id,
                    type_index: i,
                    t,
                });
            }
        }
    }
    if targets.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    Ok(Dataset {
        feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        x: Matrix::new(targets.len(), FEATURE_NAMES.len(), data),
        targets,
        target_kind,
        keys,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub min: f64,
    pub max: f64,
}

/// Per-column min-max scaler, persisted as `{column: {min, max}}` in column
/// order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scaler {
    pub columns: IndexMap<String, ColumnRange>,
}

impl Scaler {
    pub fn fit(names: &[String], x: &Matrix) -> Scaler {
        let columns = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let (min, max) = x
                    .iter_rows()
                    .map(|r| r[j])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
                (name.clone(), ColumnRange { min, max })
            })
            .collect();
        Scaler { columns }
    }

    /// `(x - min) / (max - min)`, constant columns map to 0, no clipping.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix, FeatureError> {
        if x.cols() != self.columns.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.columns.len(),
                got: x.cols(),
            });
        }
        let ranges: Vec<ColumnRange> = self.columns.values().copied().collect();
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, r) in out.row_mut(i).iter_mut().zip(&ranges) {
                let span = r.max - r.min;
                *v = if span > 0.0 { (*v - r.min) / span } else { 0.0 };
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, x: &Matrix) -> Result<Matrix, FeatureError> {
        if x.cols() != self.columns.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.columns.len(),
                got: x.cols(),
            });
        }
        let ranges: Vec<ColumnRange> = self.columns.values().copied().collect();
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (v, r) in out.row_mut(i).iter_mut().zip(&ranges) {
                *v = r.min + *v * (r.max - r.min);
            }
        }
        Ok(out)
    }

    /// Checks that the scaler was fit on columns named like `names`.
    pub fn check_columns(&self, names: &[String]) -> Result<(), FeatureError> {
        if names.len() != self.columns.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.columns.len(),
                got: names.len(),
            });
        }
        for name in names {
            if !self.columns.contains_key(name) {
                return Err(FeatureError::UnknownColumn(name.clone()));
            }
        }
        Ok(())
    }
}

pub fn fit_scaler(dataset: &Dataset) -> Scaler {
    Scaler::fit(&dataset.feature_names, &dataset.x)
}

pub fn apply_scaler(scaler: &Scaler, rows: &Matrix) -> Result<Matrix, FeatureError> {
    scaler.transform(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub column: usize,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WrapperSelection {
    /// Every feature, most important first (ties by column order).
    pub ranking: Vec<FeatureImportance>,
    /// The dataset restricted to features with importance >= the floor, in
    /// their original column order.
    pub dataset: Dataset,
}

/// Ranks features by the variance reduction a single regression tree
/// attributes to them and drops those below `importance_floor`.
pub fn wrapper_select(
    dataset: &Dataset,
    max_depth: Option<usize>,
    importance_floor: f64,
) -> Result<WrapperSelection, FeatureError> {
    if dataset.is_empty() {
        return Err(FeatureError::EmptyDataset);
    }
    let params = TreeParams {
        max_depth,
        ..TreeParams::default()
    };
    let tree = tree_fit(&dataset.x, &dataset.targets, params, &mut rng_from(0))?;
    let importances = tree.feature_importances();
    let mut ranking: Vec<FeatureImportance> = importances
        .iter()
        .enumerate()
        .map(|(column, &importance)| FeatureImportance {
            name: dataset.feature_names[column].clone(),
            column,
            importance,
        })
        .collect();
    ranking.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.column.cmp(&b.column)));

    let keep: Vec<usize> = (0..importances.len())
        .filter(|&j| importances[j] >= importance_floor)
        .collect();
    let pruned = Dataset {
        feature_names: keep.iter().map(|&j| dataset.feature_names[j].clone()).collect(),
        x: dataset.x.select_columns(&keep),
        targets: dataset.targets.clone(),
        target_kind: dataset.target_kind,
        keys: dataset.keys.clone(),
    };
    Ok(WrapperSelection {
        ranking,
        dataset: pruned,
    })
}
