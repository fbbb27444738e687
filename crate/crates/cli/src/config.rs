use std::path::{Path, PathBuf};

use qol_impact::evaluate::{Algorithm, GridRanges};
use qol_impact::features::TargetKind;
use qol_impact::ingest::ParseMode;
use qol_impact::synth::SynthConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

/// Run configuration; every field has a default so a config file only needs
/// the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub requests: Option<PathBuf>,
    pub projects: Option<PathBuf>,
    /// Complaint type to QoL indicator CSV; the bundled list when absent.
    pub whitelist: Option<PathBuf>,
    /// Report windows CSV; the bundled windows when absent.
    pub windows: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub parse_mode: ParseModeName,
    pub alpha: f64,
    pub frequency_threshold: usize,
    /// Additive smoothing of the log-ratio target.
    pub smoothing: f64,
    pub targets: Vec<TargetKind>,
    pub algorithms: Vec<Algorithm>,
    pub grid: GridRanges,
    pub folds: usize,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub wrapper: WrapperConfig,
    pub synth: SynthConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseModeName {
    Strict,
    #[default]
    Lenient,
}

impl From<ParseModeName> for ParseMode {
    fn from(m: ParseModeName) -> Self {
        match m {
            ParseModeName::Strict => ParseMode::Strict,
            ParseModeName::Lenient => ParseMode::Lenient,
        }
    }
}

/// Tree-based feature pruning before model fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrapperConfig {
    pub enabled: bool,
    pub max_depth: Option<usize>,
    pub importance_floor: f64,
}

impl Default for WrapperConfig {
    fn default() -> Self {
        WrapperConfig {
            enabled: false,
            max_depth: Some(8),
            importance_floor: 0.01,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            requests: None,
            projects: None,
            whitelist: None,
            windows: None,
            output_dir: PathBuf::from("out"),
            parse_mode: ParseModeName::Lenient,
            alpha: 0.05,
            frequency_threshold: 5,
            smoothing: 0.0,
            targets: vec![TargetKind::Count, TargetKind::LogRatio],
            algorithms: vec![Algorithm::Ols, Algorithm::Dt, Algorithm::RfAdaboost],
            grid: GridRanges::default(),
            folds: 10,
            seed: 0,
            jobs: None,
            wrapper: WrapperConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

/// The analysis-relevant part of the configuration. Paths, the output
/// directory and the worker count are left out so that relocating a run
/// does not change its hash.
#[derive(Serialize)]
struct HashedConfig<'a> {
    parse_mode: ParseModeName,
    alpha: f64,
    frequency_threshold: usize,
    smoothing: f64,
    targets: &'a [TargetKind],
    algorithms: &'a [Algorithm],
    grid: &'a GridRanges,
    folds: usize,
    seed: u64,
    wrapper: &'a WrapperConfig,
    synth: &'a SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::data(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |msg: &str| Err(CliError::Usage(msg.to_string()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return usage("alpha must lie in (0, 1)");
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return usage("smoothing must be a finite value >= 0");
        }
        if self.folds < 2 {
            return usage("folds must be at least 2");
        }
        if self.targets.is_empty() || self.algorithms.is_empty() {
            return usage("targets and algorithms must be nonempty");
        }
        if self.grid.depths.is_empty() || self.grid.estimators.is_empty() {
            return usage("grid ranges must be nonempty");
        }
        if self.grid.depths.contains(&0) || self.grid.estimators.contains(&0) {
            return usage("grid values start at 1");
        }
        if self.jobs == Some(0) {
            return usage("jobs must be at least 1");
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        let hashed = HashedConfig {
            parse_mode: self.parse_mode,
            alpha: self.alpha,
            frequency_threshold: self.frequency_threshold,
            smoothing: self.smoothing,
            targets: &self.targets,
            algorithms: &self.algorithms,
            grid: &self.grid,
            folds: self.folds,
            seed: self.seed,
            wrapper: &self.wrapper,
            synth: &self.synth,
        };
        let canonical = serde_json::to_vec(&hashed).expect("config serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn requests_path(&self) -> Result<&Path, CliError> {
        self.requests
            .as_deref()
            .ok_or_else(|| CliError::Usage("no requests file (use --requests or the config key)".into()))
    }

    pub fn projects_path(&self) -> Result<&Path, CliError> {
        self.projects
            .as_deref()
            .ok_or_else(|| CliError::Usage("no projects file (use --projects or the config key)".into()))
    }
}

/// Parses `a-b` (inclusive) or a comma-separated list such as `1,2,5`.
pub fn parse_range(s: &str) -> Result<Vec<usize>, String> {
    let bad = || format!("invalid range {s:?} (use e.g. 1-20 or 1,2,5)");
    if let Some((a, b)) = s.split_once('-') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let values: Vec<usize> = s
        .split(',')
        .map(|v| v.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if values.is_empty() || values.contains(&0) {
        return Err(bad());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 42, "folds": 5, "targets": ["count"]}"#).unwrap();
        assert_eq!(c.seed, 42);
        assert_eq!(c.folds, 5);
        assert_eq!(c.targets, vec![TargetKind::Count]);
        assert_eq!(c.grid.depths.len(), 20);
        c.validate().unwrap();
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 1}"#).is_err());
    }

    #[test]
    fn hash_ignores_locations() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.jobs = Some(4);
        b.requests = Some("r.csv".into());
        assert_eq!(a.sha256(), b.sha256());
        b.seed = 1;
        assert_ne!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_range("1-4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_range("3,1,8").unwrap(), vec![3, 1, 8]);
        assert!(parse_range("0-3").is_err());
        assert!(parse_range("5-2").is_err());
        assert!(parse_range("a").is_err());
    }
}
