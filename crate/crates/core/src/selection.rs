//! Three-gate screening of the complaint catalog: a pre/post Welch test, a
//! project-frequency threshold and the QoL whitelist.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{ComplaintCatalog, ConstructionProject, QoLIndicator, ServiceRequest, Whitelist};
use crate::features::{project_series, ProjectSeries};
use crate::stats::{welch_t_test, StatsError, TTestResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningParams {
    pub alpha: f64,
    /// A type must occur in strictly more projects than this.
    pub frequency_threshold: usize,
}

impl Default for ScreeningParams {
    fn default() -> Self {
        ScreeningParams {
            alpha: 0.05,
            frequency_threshold: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningOutcome {
    pub complaint_type: String,
    pub type_index: usize,
    /// `None` when the test was degenerate (e.g. the type never occurs).
    pub test: Option<TTestResult>,
    pub frequency: usize,
    pub indicator: Option<QoLIndicator>,
    pub passed_mapping: bool,
    pub selected: bool,
}

/// Welch test of the pooled pre-start months against the pooled post-start
/// months of type `i` across all projects.
pub fn screen_type(type_index: usize, projects: &[ProjectSeries], alpha: f64) -> Result<TTestResult, StatsError> {
    let mut pre = Vec::with_capacity(projects.len() * 12);
    let mut post = Vec::with_capacity(projects.len() * 12);
    for p in projects {
        if let Some(s) = p.get(type_index) {
            pre.extend(s.pre().iter().map(|&c| c as f64));
            post.extend(s.post().iter().map(|&c| c as f64));
        }
    }
    welch_t_test(&pre, &post, alpha)
}

/// Number of projects with at least one type-`i` complaint after the start.
pub fn project_frequency(type_index: usize, projects: &[ProjectSeries]) -> usize {
    projects
        .iter()
        .filter(|p| p.get(type_index).is_some_and(|s| s.post().iter().any(|&c| c > 0)))
        .count()
}

pub fn select_types(
    projects: &[ProjectSeries],
    catalog: &ComplaintCatalog,
    whitelist: &Whitelist,
    params: ScreeningParams,
) -> Vec<ScreeningOutcome> {
    let types: Vec<(usize, &str)> = catalog.iter().collect();
    types
        .par_iter()
        .map(|&(i, name)| {
            let test = screen_type(i, projects, params.alpha).ok();
            let frequency = project_frequency(i, projects);
            let indicator = whitelist.lookup(name);
            let significant = test.is_some_and(|t| t.p_value < params.alpha);
            let passed_mapping = indicator.is_some();
            ScreeningOutcome {
                complaint_type: name.to_string(),
                type_index: i,
                test,
                frequency,
                indicator,
                passed_mapping,
                selected: significant && frequency > params.frequency_threshold && passed_mapping,
            }
        })
        .collect()
}

pub fn selected_indices(outcomes: &[ScreeningOutcome]) -> Vec<usize> {
    outcomes.iter().filter(|o| o.selected).map(|o| o.type_index).collect()
}

/// Catalog, monthly series and screening outcomes for in-scope requests.
#[derive(Debug, Clone)]
pub struct Screened {
    pub catalog: ComplaintCatalog,
    pub series: Vec<ProjectSeries>,
    pub outcomes: Vec<ScreeningOutcome>,
}

impl Screened {
    pub fn selected(&self) -> Vec<usize> {
        selected_indices(&self.outcomes)
    }
}

/// Builds the catalog from the requests, aggregates monthly series per
/// project and screens every type.
pub fn screen_requests(
    requests: &[ServiceRequest],
    projects: &[ConstructionProject],
    whitelist: &Whitelist,
    params: ScreeningParams,
) -> Screened {
    let catalog = ComplaintCatalog::from_requests(requests);
    let series = project_series(requests, projects, &catalog);
    let outcomes = select_types(&series, &catalog, whitelist, params);
    Screened {
        catalog,
        series,
        outcomes,
    }
}

/// Columns `type,t,df,p,frequency,mapping,selected`; test fields are blank
/// for degenerate types and `mapping` holds the QoL indicator, blank when the
/// type is not whitelisted.
pub fn write_screening_csv<W: Write>(writer: W, outcomes: &[ScreeningOutcome]) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["type", "t", "df", "p", "frequency", "mapping", "selected"])?;
    for o in outcomes {
        let (t, df, p) = match &o.test {
            Some(r) => (
                r.t_statistic.to_string(),
                r.degrees_of_freedom.to_string(),
                r.p_value.to_string(),
            ),
            None => Default::default(),
        };
        csv.write_record([
            o.complaint_type.as_str(),
            &t,
            &df,
            &p,
            &o.frequency.to_string(),
            o.indicator.map_or("", |i| i.as_str()),
            if o.selected { "true" } else { "false" },
        ])?;
    }
    csv.flush()?;
    Ok(())
}
