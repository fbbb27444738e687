//! Predicted-vs-actual percentage changes per complaint type and construction
//! phase, the algorithm comparison table and grid exports.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{normalize_type, ComplaintCatalog, PRE_MONTHS};
use crate::evaluate::{write_grid_csv, ComparisonRow, EvalError, GridResult, TrainedModel};
use crate::features::{Dataset, ProjectSeries, TargetKind};

const DEFAULT_WINDOWS: &str = include_str!("../data/change_windows.csv");

/// Baseline used for every percentage change, recorded in report metadata.
pub const BASELINE: &str = "pre_window_monthly_mean";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("change reports need a count-target model, got {0}")]
    WrongTarget(&'static str),
    #[error("window {start}-{end} for {complaint_type:?} must satisfy 1 <= start <= end <= 12")]
    InvalidWindow {
        complaint_type: String,
        start: usize,
        end: usize,
    },
    #[error("{predictions} predictions for {rows} dataset rows")]
    PredictionLength { rows: usize, predictions: usize },
    #[error("dataset rows carry no (project, type, month) keys")]
    MissingKeys,
    #[error("evaluate: {0}")]
    Eval(#[from] EvalError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Post-start months `start..=end` (1-based) reported for one type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeWindow {
    pub complaint_type: String,
    pub window_start: usize,
    pub window_end: usize,
}

impl ChangeWindow {
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.window_start < 1 || self.window_start > self.window_end || self.window_end > 12 {
            return Err(ReportError::InvalidWindow {
                complaint_type: self.complaint_type.clone(),
                start: self.window_start,
                end: self.window_end,
            });
        }
        Ok(())
    }

    /// Window months as indices `t` of the 24-month analysis window.
    fn months(&self) -> std::ops::RangeInclusive<usize> {
        PRE_MONTHS + self.window_start..=PRE_MONTHS + self.window_end
    }
}

pub fn read_windows<R: Read>(reader: R) -> Result<Vec<ChangeWindow>, ReportError> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut windows = Vec::new();
    for row in csv.deserialize() {
        let w: ChangeWindow = row?;
        w.validate()?;
        windows.push(w);
    }
    Ok(windows)
}

pub fn default_windows() -> Vec<ChangeWindow> {
    read_windows(DEFAULT_WINDOWS.as_bytes()).expect("bundled windows are valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeFlag {
    Ok,
    /// Some projects had a zero baseline and were left out of the average.
    PartialBaseline,
    /// Every project had a zero baseline.
    UndefinedBaseline,
    /// The type has no dataset rows, so there is no predicted change.
    TypeNotInDataset,
    /// The type is not in the complaint catalog.
    UnknownType,
}

impl ChangeFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            ChangeFlag::Ok => "ok",
            ChangeFlag::PartialBaseline => "partial_baseline",
            ChangeFlag::UndefinedBaseline => "undefined_baseline",
            ChangeFlag::TypeNotInDataset => "type_not_in_dataset",
            ChangeFlag::UnknownType => "unknown_type",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEntry {
    pub complaint_type: String,
    pub window_start: usize,
    pub window_end: usize,
    pub predicted_change_pct: Option<f64>,
    pub actual_change_pct: Option<f64>,
    pub flag: ChangeFlag,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn pct_change(window_mean: f64, baseline: f64) -> f64 {
    100.0 * (window_mean - baseline) / baseline
}

/// Change report from predictions aligned with `dataset` rows (for example
/// out-of-fold predictions). For each project the change is taken against the
/// mean monthly count of the 12 pre-start months, then averaged over projects
/// with a nonzero baseline.
pub fn change_report_from_predictions(
    dataset: &Dataset,
    predictions: &[f64],
    projects: &[ProjectSeries],
    catalog: &ComplaintCatalog,
    windows: &[ChangeWindow],
) -> Result<Vec<ChangeEntry>, ReportError> {
    if dataset.target_kind != TargetKind::Count {
        return Err(ReportError::WrongTarget(dataset.target_kind.as_str()));
    }
    if predictions.len() != dataset.len() {
        return Err(ReportError::PredictionLength {
            rows: dataset.len(),
            predictions: predictions.len(),
        });
    }
    if dataset.keys.len() != dataset.len() {
        return Err(ReportError::MissingKeys);
    }
    let predicted: HashMap<(u32, usize, usize), f64> = dataset
        .keys
        .iter()
        .zip(predictions)
        .map(|(k, &p)| ((k.project_id, k.type_index, k.t), p))
        .collect();
    let by_name: HashMap<String, usize> = catalog.iter().map(|(i, name)| (normalize_type(name), i)).collect();

    let mut entries = Vec::with_capacity(windows.len());
    for w in windows {
        w.validate()?;
        let mut entry = ChangeEntry {
            complaint_type: w.complaint_type.clone(),
            window_start: w.window_start,
            window_end: w.window_end,
            predicted_change_pct: None,
            actual_change_pct: None,
            flag: ChangeFlag::UnknownType,
        };
        let Some(&i) = by_name.get(&normalize_type(&w.complaint_type)) else {
            entries.push(entry);
            continue;
        };
        let mut actual = Vec::new();
        let mut model = Vec::new();
        let mut complete_predictions = true;
        for ps in projects {
            let Some(series) = ps.get(i) else { continue };
            let baseline = series.pre_mean();
            if baseline == 0.0 {
                continue;
            }
            let window_actual = mean(w.months().map(|t| series.counts[t - 1] as f64)).expect("nonempty window");
            actual.push(pct_change(window_actual, baseline));
            let window_predicted: Option<Vec<f64>> = w
                .months()
                .map(|t| predicted.get(&(ps.project.id, i, t)).copied())
                .collect();
            match window_predicted {
                Some(p) => model.push(pct_change(mean(p.into_iter()).expect("nonempty window"), baseline)),
                None => complete_predictions = false,
            }
        }
        entry.actual_change_pct = mean(actual.iter().copied());
        entry.flag = if actual.is_empty() {
            ChangeFlag::UndefinedBaseline
        } else if !complete_predictions || model.is_empty() {
            ChangeFlag::TypeNotInDataset
        } else if actual.len() < projects.len() {
            ChangeFlag::PartialBaseline
        } else {
            ChangeFlag::Ok
        };
        if complete_predictions {
            entry.predicted_change_pct = mean(model.iter().copied());
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Change report using a trained count model's predictions on `dataset`.
pub fn change_report(
    model: &TrainedModel,
    dataset: &Dataset,
    projects: &[ProjectSeries],
    catalog: &ComplaintCatalog,
    windows: &[ChangeWindow],
) -> Result<Vec<ChangeEntry>, ReportError> {
    if model.target_kind != TargetKind::Count {
        return Err(ReportError::WrongTarget(model.target_kind.as_str()));
    }
    let predictions = model.predict(&dataset.x)?;
    change_report_from_predictions(dataset, &predictions, projects, catalog, windows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const CHANGE_HEADER: [&str; 6] = [
    "complaint_type",
    "window_start",
    "window_end",
    "predicted_change_pct",
    "actual_change_pct",
    "flag",
];

/// Undefined percentages are written as empty fields.
pub fn write_change_csv<W: Write>(writer: W, entries: &[ChangeEntry]) -> Result<(), ReportError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(CHANGE_HEADER)?;
    for e in entries {
        csv.write_record([
            e.complaint_type.clone(),
            e.window_start.to_string(),
            e.window_end.to_string(),
            opt(e.predicted_change_pct),
            opt(e.actual_change_pct),
            e.flag.as_str().to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

pub const COMPARISON_HEADER: [&str; 6] = ["algorithm", "target", "r_squared", "mse", "depth", "estimators"];

pub fn comparison_table<W: Write>(writer: W, rows: &[ComparisonRow]) -> Result<(), ReportError> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(COMPARISON_HEADER)?;
    for r in rows {
        csv.write_record([
            r.algorithm.as_str().to_string(),
            r.target.as_str().to_string(),
            r.r_squared.to_string(),
            r.mse.to_string(),
            r.depth.map(|d| d.to_string()).unwrap_or_default(),
            r.estimators.map(|d| d.to_string()).unwrap_or_default(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}

/// Long-format grid CSV for heatmaps and depth curves; rejects incomplete
/// grids.
pub fn heatmap_export<W: Write>(writer: W, grid: &GridResult) -> Result<(), ReportError> {
    Ok(write_grid_csv(writer, grid)?)
}

/// Seed and configuration hash carried by every analysis artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: u64,
    pub config_sha256: String,
}

impl Metadata {
    /// First line of CSV artifacts; readers skip `#` lines.
    pub fn comment_line(&self) -> String {
        format!("# seed={} config_sha256={}\n", self.seed, self.config_sha256)
    }
}

/// JSON document wrapping an artifact with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Documented<T> {
    pub metadata: Metadata,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub baseline: Option<String>,
    pub data: T,
}

pub fn write_json<W: Write, T: Serialize>(mut writer: W, value: &T) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    Ok(())
}
