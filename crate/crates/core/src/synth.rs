//! Seeded synthetic projects and 311 requests with planted effects whose
//! monthly means are known in closed form.

use std::collections::HashMap;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    expand_window, ComplaintCatalog, ConstructionProject, ServiceRequest, ZipCode, PRE_MONTHS, WINDOW_MONTHS,
};
use crate::evaluate::{score, EvalError};
use crate::features::{Dataset, TargetKind};
use crate::ingest::{write_projects, write_requests, DateStyle, IngestError};
use crate::seed::{derived_rng, uniform_index, Stream};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("oracle: {0}")]
    Oracle(String),
    #[error("evaluate: {0}")]
    Eval(#[from] EvalError),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRate {
    pub complaint_type: String,
    /// Poisson mean per project-month before multipliers.
    pub lambda: f64,
}

/// Multiplies the rate of one type in post-start months
/// `window_start..=window_end` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub complaint_type: String,
    pub lift: f64,
    pub window_start: usize,
    pub window_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_projects: usize,
    /// Project `k` (1-based) sits in zip `zip_base + k - 1`.
    pub zip_base: u32,
    pub start_min: NaiveDate,
    pub start_max: NaiveDate,
    pub duration_min: u32,
    pub duration_max: u32,
    pub types: Vec<TypeRate>,
    pub effects: Vec<PlantedEffect>,
    /// Range of the per-project rate multiplier, drawn uniformly.
    pub heterogeneity: (f64, f64),
}

fn rate(name: &str, lambda: f64) -> TypeRate {
    TypeRate {
        complaint_type: name.into(),
        lambda,
    }
}

fn effect(name: &str, lift: f64, window_start: usize, window_end: usize) -> PlantedEffect {
    PlantedEffect {
        complaint_type: name.into(),
        lift,
        window_start,
        window_end,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_projects: 27,
            zip_base: 10001,
            start_min: NaiveDate::from_ymd_opt(2014, 1, 1).expect("valid date"),
            start_max: NaiveDate::from_ymd_opt(2016, 12, 31).expect("valid date"),
            duration_min: 6,
            duration_max: 36,
            types: vec![
                rate("Noise", 12.0),
                rate("Noise construction", 6.0),
                rate("Air quality", 4.0),
                rate("Water system", 5.0),
                rate("Hot/cold water systems", 3.0),
                rate("Plumbing", 4.0),
                rate("Street condition", 8.0),
                rate("Solid Waste", 5.0),
                rate("Waste Water (Sewer)", 4.0),
                rate("Project inspection", 2.0),
                rate("Safety", 3.0),
                rate("Parking", 10.0),
                rate("Metering", 2.0),
                rate("Building use", 3.0),
                rate("General construction", 5.0),
                rate("Taxi complaint", 6.0),
                rate("Graffiti", 4.0),
                rate("Animal abuse", 2.0),
                rate("Derelict vehicle", 3.0),
                rate("Homeless encampment", 2.0),
            ],
            effects: vec![
                effect("Air quality", 2.0, 1, 4),
                effect("Waste Water (Sewer)", 2.0, 1, 3),
                effect("Safety", 2.0, 4, 8),
                effect("Noise construction", 2.0, 1, 3),
                effect("Street condition", 2.0, 10, 12),
            ],
            heterogeneity: (1.0, 1.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.n_projects == 0 {
            return bad("n_projects must be at least 1".into());
        }
        if self.zip_base as u64 + self.n_projects as u64 > 100_000 {
            return bad("zip codes would exceed five digits".into());
        }
        if self.start_min > self.start_max {
            return bad("start_min is after start_max".into());
        }
        if self.duration_min > self.duration_max {
            return bad("duration_min exceeds duration_max".into());
        }
        let (lo, hi) = self.heterogeneity;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad(format!("heterogeneity range ({lo}, {hi}) must satisfy 0 <= lo <= hi"));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.types {
            if !(t.lambda.is_finite() && t.lambda >= 0.0) {
                return bad(format!("lambda for {:?} must be finite and >= 0", t.complaint_type));
            }
            if !seen.insert(t.complaint_type.as_str()) {
                return bad(format!("duplicate type {:?}", t.complaint_type));
            }
        }
        for e in &self.effects {
            if !seen.contains(e.complaint_type.as_str()) {
                return bad(format!("effect on unknown type {:?}", e.complaint_type));
            }
            if !(e.lift.is_finite() && e.lift > 0.0) {
                return bad(format!("lift for {:?} must be > 0", e.complaint_type));
            }
            if e.window_start < 1 || e.window_start > e.window_end || e.window_end > 12 {
                return bad(format!(
                    "effect window {}-{} outside 1..12",
                    e.window_start, e.window_end
                ));
            }
        }
        Ok(())
    }

    /// Lift applied to `type_name` in window month `t` (1..=24).
    fn lift(&self, type_name: &str, t: usize) -> f64 {
        if t <= PRE_MONTHS {
            return 1.0;
        }
        let post = t - PRE_MONTHS;
        self.effects
            .iter()
            .filter(|e| e.complaint_type == type_name && (e.window_start..=e.window_end).contains(&post))
            .map(|e| e.lift)
            .product()
    }
}

/// A synthetic project and its rate multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProject {
    pub project: ConstructionProject,
    pub multiplier: f64,
}

/// Draws project starts, durations and multipliers. Uses its own stream so
/// the layout is available without sampling counts.
pub fn project_layout(config: &SynthConfig) -> Result<Vec<SynthProject>, SynthError> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, Stream::Synth, 0);
    let span_days = (config.start_max - config.start_min).num_days() as usize + 1;
    let durations = (config.duration_max - config.duration_min) as usize + 1;
    let (lo, hi) = config.heterogeneity;
    (0..config.n_projects)
        .map(|k| {
            let start_date = config.start_min + Duration::days(uniform_index(&mut rng, span_days) as i64);
            let duration_months = config.duration_min + uniform_index(&mut rng, durations) as u32;
            let u: f64 = rng.gen();
            let zip = format!("{:05}", config.zip_base as usize + k);
            Ok(SynthProject {
                project: ConstructionProject {
                    id: k as u32 + 1,
                    start_date,
                    duration_months,
                    zip: ZipCode::parse(&zip).ok_or_else(|| SynthError::InvalidConfig(format!("bad zip {zip}")))?,
                },
                multiplier: lo + (hi - lo) * u,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedSeries {
    pub project_id: u32,
    pub complaint_type: String,
    /// Expected count of window month `t` at index `t - 1`.
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub projects: Vec<SynthProject>,
    pub expectations: Vec<ExpectedSeries>,
}

impl Manifest {
    pub fn expected(&self, project_id: u32, complaint_type: &str, t: usize) -> Option<f64> {
        self.expectations
            .iter()
            .find(|e| e.project_id == project_id && e.complaint_type == complaint_type)
            .and_then(|e| e.means.get(t.checked_sub(1)?).copied())
    }
}

/// Closed-form expected monthly counts `lambda * multiplier * lift` for every
/// (project, type) pair.
pub fn oracle_expectations(config: &SynthConfig) -> Result<Manifest, SynthError> {
    let projects = project_layout(config)?;
    let mut expectations = Vec::with_capacity(projects.len() * config.types.len());
    for p in &projects {
        for t in &config.types {
            let means = (1..=WINDOW_MONTHS)
                .map(|m| t.lambda * p.multiplier * config.lift(&t.complaint_type, m))
                .collect();
            expectations.push(ExpectedSeries {
                project_id: p.project.id,
                complaint_type: t.complaint_type.clone(),
                means,
            });
        }
    }
    Ok(Manifest {
        seed: config.seed,
        config: config.clone(),
        projects,
        expectations,
    })
}

const KNUTH_CHUNK: f64 = 30.0;

/// Poisson draw by Knuth's multiplication method, summing chunks of mean at
/// most 30 so `exp(-lambda)` never underflows.
pub fn poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let mut remaining = lambda;
    let mut total = 0;
    while remaining > 0.0 {
        let chunk = remaining.min(KNUTH_CHUNK);
        remaining -= chunk;
        let limit = libm::exp(-chunk);
        let mut p = rng.gen::<f64>();
        while p > limit {
            total += 1;
            p *= rng.gen::<f64>();
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub projects: Vec<ConstructionProject>,
    pub requests: Vec<ServiceRequest>,
    pub manifest: Manifest,
}

impl SynthOutput {
    /// Project table with header `id,start,duration,zip`.
    pub fn projects_csv(&self) -> Result<Vec<u8>, SynthError> {
        let mut buf = Vec::new();
        write_projects(&mut buf, &self.projects)?;
        Ok(buf)
    }

    /// Request export with M/D/YY dates.
    pub fn requests_csv(&self) -> Result<Vec<u8>, SynthError> {
        let mut buf = Vec::new();
        write_requests(&mut buf, &self.requests, DateStyle::Short)?;
        Ok(buf)
    }

    pub fn manifest_json(&self) -> Vec<u8> {
        let mut buf = serde_json::to_vec_pretty(&self.manifest).expect("manifest serializes");
        buf.push(b'\n');
        buf
    }
}

/// Samples a Poisson count for every (project, type, month) and expands each
/// count into requests dated uniformly within the month.
pub fn generate(config: &SynthConfig) -> Result<SynthOutput, SynthError> {
    let manifest = oracle_expectations(config)?;
    let mut rng = derived_rng(config.seed, Stream::Synth, 1);
    let mut requests = Vec::new();
    let mut key = 0u64;
    let mut expected = manifest.expectations.iter();
    for p in &manifest.projects {
        let window = expand_window(&p.project);
        for t in &config.types {
            let series = expected.next().expect("one expectation per project and type");
            for (m, from, to) in window.months() {
                let count = poisson(&mut rng, series.means[m - 1]);
                let days = (to - from).num_days() as usize;
                for _ in 0..count {
                    key += 1;
                    requests.push(ServiceRequest {
                        unique_key: key.to_string(),
                        created_date: from + Duration::days(uniform_index(&mut rng, days) as i64),
                        agency: "SYN".into(),
                        complaint_type: t.complaint_type.clone(),
                        descriptor: String::new(),
                        incident_zip: p.project.zip.clone(),
                        borough: String::new(),
                    });
                }
            }
        }
    }
    Ok(SynthOutput {
        projects: manifest.projects.iter().map(|p| p.project.clone()).collect(),
        requests,
        manifest,
    })
}

/// R² of predicting every count-target row by its generating mean.
pub fn oracle_r_squared(dataset: &Dataset, catalog: &ComplaintCatalog, manifest: &Manifest) -> Result<f64, SynthError> {
    if dataset.target_kind != TargetKind::Count {
        return Err(SynthError::Oracle("oracle R² is defined for the count target".into()));
    }
    let lookup: HashMap<(u32, &str), &ExpectedSeries> = manifest
        .expectations
        .iter()
        .map(|e| ((e.project_id, e.complaint_type.as_str()), e))
        .collect();
    let expected = dataset
        .keys
        .iter()
        .map(|k| {
            let name = catalog
                .name(k.type_index)
                .ok_or_else(|| SynthError::Oracle(format!("type index {} not in catalog", k.type_index)))?;
            lookup
                .get(&(k.project_id, name))
                .map(|e| e.means[k.t - 1])
                .ok_or_else(|| SynthError::Oracle(format!("no expectation for project {} type {name:?}", k.project_id)))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    if expected.len() != dataset.len() {
        return Err(SynthError::Oracle("dataset rows carry no keys".into()));
    }
    Ok(score(&dataset.targets, &expected)?.r_squared)
}
