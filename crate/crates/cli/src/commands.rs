use std::fmt::Display;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use qol_impact::domain::Whitelist;
use qol_impact::evaluate::{
    cross_validate, grid_search, select_best, train as train_model, Algorithm, ComparisonRow, CvResult, FoldScore,
    GridResult, ModelSpec, ScoreSet, TrainedModel,
};
use qol_impact::features::{build_dataset, wrapper_select, Dataset, FeatureError, FeatureImportance, TargetKind};
use qol_impact::ingest::{parse_projects, parse_requests, retain_in_scope, IngestReport};
use qol_impact::report::{
    change_report_from_predictions, comparison_table, default_windows, heatmap_export, read_windows, write_change_csv,
    ChangeEntry, ChangeWindow, Documented, Metadata, BASELINE,
};
use qol_impact::selection::{screen_requests, write_screening_csv, Screened, ScreeningParams};
use qol_impact::synth::generate;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

trait Context<T> {
    fn data_err(self, path: &Path) -> Result<T, CliError>;
    fn internal(self) -> Result<T, CliError>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn data_err(self, path: &Path) -> Result<T, CliError> {
        self.map_err(|e| CliError::data(path, e))
    }

    fn internal(self) -> Result<T, CliError> {
        self.map_err(CliError::internal)
    }
}

fn log(msg: impl Display) {
    eprintln!("{msg}");
}

struct Output<'a> {
    dir: &'a Path,
    metadata: Metadata,
}

impl<'a> Output<'a> {
    fn new(config: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.output_dir).data_err(&config.output_dir)?;
        Ok(Output {
            dir: &config.output_dir,
            metadata: Metadata {
                seed: config.seed,
                config_sha256: config.sha256(),
            },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, bytes).data_err(&path)?;
        Ok(path)
    }

    /// CSV artifact preceded by the metadata comment line (plus `extra`
    /// key=value pairs).
    fn csv<E: Display>(
        &self,
        name: &str,
        extra: &str,
        body: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
    ) -> Result<PathBuf, CliError> {
        let mut buf = self.metadata.comment_line().into_bytes();
        if !extra.is_empty() {
            buf.pop();
            buf.extend_from_slice(format!(" {extra}\n").as_bytes());
        }
        body(&mut buf).internal()?;
        self.write(name, &buf)
    }

    fn json<T: Serialize>(&self, name: &str, baseline: Option<&str>, data: T) -> Result<PathBuf, CliError> {
        let doc = Documented {
            metadata: self.metadata.clone(),
            baseline: baseline.map(String::from),
            data,
        };
        let mut bytes = serde_json::to_vec_pretty(&doc).internal()?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let generated = generate(&config.synth).map_err(|e| CliError::Usage(e.to_string()))?;
    out.write("projects.csv", &generated.projects_csv().internal()?)?;
    out.write("requests.csv", &generated.requests_csv().internal()?)?;
    out.write("manifest.json", &generated.manifest_json())?;
    log(format!(
        "synth: {} projects, {} requests -> {}",
        generated.projects.len(),
        generated.requests.len(),
        out.dir.display()
    ));
    Ok(())
}

struct Prepared {
    requests_path: PathBuf,
    report: IngestReport,
    screened: Screened,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).data_err(path)?))
}

fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let projects_path = config.projects_path()?;
    let requests_path = config.requests_path()?;
    // fail before any work when an optional input is configured but missing
    for path in [config.whitelist.as_deref(), config.windows.as_deref()]
        .into_iter()
        .flatten()
    {
        if !path.is_file() {
            return Err(CliError::data(path, "no such file"));
        }
    }
    let projects = parse_projects(open(projects_path)?).data_err(projects_path)?;
    if projects.is_empty() {
        return Err(CliError::data(projects_path, "no projects"));
    }
    let (requests, mut report) =
        parse_requests(open(requests_path)?, config.parse_mode.into()).data_err(requests_path)?;
    let requests = retain_in_scope(requests, &projects, &mut report);
    let whitelist = match &config.whitelist {
        Some(path) => Whitelist::from_csv(open(path)?).data_err(path)?,
        None => Whitelist::default(),
    };
    let params = ScreeningParams {
        alpha: config.alpha,
        frequency_threshold: config.frequency_threshold,
    };
    let screened = screen_requests(&requests, &projects, &whitelist, params);
    log(format!(
        "ingest: {} rows read, {} kept, {} malformed, {} out of scope; {} complaint types, {} selected",
        report.rows_read,
        report.rows_kept,
        report.rows_skipped_malformed,
        report.rows_out_of_scope,
        screened.catalog.len(),
        screened.selected().len()
    ));
    Ok(Prepared {
        requests_path: requests_path.to_path_buf(),
        report,
        screened,
    })
}

#[derive(Serialize)]
struct IngestSummary<'a> {
    report: &'a IngestReport,
    catalog: Vec<&'a str>,
}

fn write_ingest(out: &Output, prepared: &Prepared) -> Result<(), CliError> {
    let catalog = prepared.screened.catalog.iter().map(|(_, n)| n).collect();
    out.json(
        "ingest_report.json",
        None,
        IngestSummary {
            report: &prepared.report,
            catalog,
        },
    )?;
    out.csv("monthly_counts.csv", "", |buf| -> Result<(), std::io::Error> {
        use std::io::Write;
        writeln!(buf, "project_id,complaint_type,t,count")?;
        for ps in &prepared.screened.series {
            for s in &ps.series {
                let name = csv_field(prepared.screened.catalog.name(s.type_index).unwrap_or_default());
                for (t, c) in s.counts.iter().enumerate() {
                    writeln!(buf, "{},{name},{},{c}", ps.project.id, t + 1)?;
                }
            }
        }
        Ok(())
    })?;
    Ok(())
}

/// Quotes a CSV field when needed.
fn csv_field(value: &str) -> String {
    if value.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", value.replace('"', "\"\""))
    } else {
        value.to_string()
    }
}

fn write_screening(out: &Output, prepared: &Prepared) -> Result<(), CliError> {
    out.csv("screening.csv", "", |buf| {
        write_screening_csv(buf, &prepared.screened.outcomes)
    })?;
    out.json("screening.json", None, &prepared.screened.outcomes)?;
    Ok(())
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    write_ingest(&out, &prepared)
}

pub fn select(config: &RunConfig) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    write_screening(&out, &prepared)
}

/// Builds (and optionally prunes) the dataset for one target and writes it.
fn dataset(config: &RunConfig, out: &Output, prepared: &Prepared, target: TargetKind) -> Result<Dataset, CliError> {
    let selected = prepared.screened.selected();
    let ds = build_dataset(&prepared.screened.series, &selected, target, config.smoothing).map_err(|e| match e {
        FeatureError::NoSelectedTypes => CliError::data(&prepared.requests_path, "no complaint type passed screening"),
        FeatureError::EmptyDataset => CliError::data(
            &prepared.requests_path,
            format!("every {} row was undefined (try --smoothing)", target.as_str()),
        ),
        other => CliError::internal(other),
    })?;
    let ds = if config.wrapper.enabled {
        let sel = wrapper_select(&ds, config.wrapper.max_depth, config.wrapper.importance_floor).internal()?;
        out.json::<&[FeatureImportance]>(&format!("wrapper_{}.json", target.as_str()), None, &sel.ranking)?;
        if sel.dataset.feature_names.is_empty() {
            return Err(CliError::data(
                &prepared.requests_path,
                "wrapper selection removed every feature",
            ));
        }
        sel.dataset
    } else {
        ds
    };
    out.csv(&format!("dataset_{}.csv", target.as_str()), "", |buf| ds.write_csv(buf))?;
    log(format!(
        "dataset {}: {} rows x {} features",
        target.as_str(),
        ds.len(),
        ds.feature_names.len()
    ));
    Ok(ds)
}

fn model_error(prepared: &Prepared, e: impl Display) -> CliError {
    CliError::data(&prepared.requests_path, e)
}

#[derive(Serialize)]
struct CvReport<'a> {
    spec: &'a ModelSpec,
    target: TargetKind,
    folds: &'a [FoldScore],
    mean: &'a ScoreSet,
}

fn write_cv(out: &Output, spec: &ModelSpec, target: TargetKind, cv: &CvResult) -> Result<(), CliError> {
    out.json(
        &format!("cv_{}_{}.json", spec.algorithm, target.as_str()),
        None,
        CvReport {
            spec,
            target,
            folds: &cv.folds,
            mean: &cv.mean,
        },
    )?;
    Ok(())
}

fn write_model(out: &Output, model: &TrainedModel) -> Result<(), CliError> {
    out.json(
        &format!("model_{}_{}.json", model.spec.algorithm, model.target_kind.as_str()),
        None,
        model,
    )?;
    Ok(())
}

pub fn train(config: &RunConfig, spec: &ModelSpec, target: TargetKind) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    let ds = dataset(config, &out, &prepared, target)?;
    let cv = cross_validate(spec, &ds, config.folds, config.seed).map_err(|e| model_error(&prepared, e))?;
    write_cv(&out, spec, target, &cv)?;
    let model = train_model(spec, &ds, config.seed).map_err(|e| model_error(&prepared, e))?;
    write_model(&out, &model)?;
    log(format!(
        "{} {}: mean R² {:.4}, MSE {:.4}",
        spec.algorithm,
        target.as_str(),
        cv.mean.r_squared,
        cv.mean.mse
    ));
    Ok(())
}

#[derive(Serialize)]
struct BestReport {
    algorithm: Algorithm,
    target: TargetKind,
    depth: usize,
    estimators: usize,
    cells: usize,
    score: ScoreSet,
}

fn run_grid(
    config: &RunConfig,
    out: &Output,
    prepared: &Prepared,
    ds: &Dataset,
    algorithm: Algorithm,
) -> Result<GridResult, CliError> {
    let grid =
        grid_search(algorithm, ds, &config.grid, config.folds, config.seed).map_err(|e| model_error(prepared, e))?;
    let target = ds.target_kind;
    out.csv(&format!("grid_{}_{}.csv", algorithm, target.as_str()), "", |buf| {
        heatmap_export(buf, &grid)
    })?;
    out.json(
        &format!("best_{}_{}.json", algorithm, target.as_str()),
        None,
        BestReport {
            algorithm,
            target,
            depth: grid.best.depth,
            estimators: grid.best.estimators,
            cells: grid.cells.len(),
            score: grid.best.score,
        },
    )?;
    log(format!(
        "grid {} {}: {} cells, best depth {} estimators {} (R² {:.4})",
        algorithm,
        target.as_str(),
        grid.cells.len(),
        grid.best.depth,
        grid.best.estimators,
        grid.best.score.r_squared
    ));
    Ok(grid)
}

pub fn tune(config: &RunConfig, algorithm: Algorithm, target: TargetKind) -> Result<(), CliError> {
    if algorithm == Algorithm::Ols {
        return Err(CliError::Usage("ols has no hyperparameters to tune; use train".into()));
    }
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    let ds = dataset(config, &out, &prepared, target)?;
    run_grid(config, &out, &prepared, &ds, algorithm)?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelFile {
    Documented(Documented<TrainedModel>),
    Bare(TrainedModel),
}

pub fn predict(config: &RunConfig, model_path: &Path, dataset_path: &Path) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let model: ModelFile = serde_json::from_reader(open(model_path)?).data_err(model_path)?;
    let model = match model {
        ModelFile::Documented(d) => d.data,
        ModelFile::Bare(m) => m,
    };
    let ds = Dataset::read_csv(open(dataset_path)?, model.target_kind).data_err(dataset_path)?;
    if ds.feature_names != model.feature_names {
        return Err(CliError::data(
            dataset_path,
            format!(
                "columns {:?} do not match the model's {:?}",
                ds.feature_names, model.feature_names
            ),
        ));
    }
    let predictions = model.predict(&ds.x).data_err(dataset_path)?;
    let has_target = ds.targets.iter().all(|t| !t.is_nan());
    let path = out.csv("predictions.csv", "", |buf| -> Result<(), std::io::Error> {
        use std::io::Write;
        if has_target {
            writeln!(buf, "prediction,target")?;
            for (p, t) in predictions.iter().zip(&ds.targets) {
                writeln!(buf, "{p},{t}")?;
            }
        } else {
            writeln!(buf, "prediction")?;
            for p in &predictions {
                writeln!(buf, "{p}")?;
            }
        }
        Ok(())
    })?;
    log(format!("predict: {} rows -> {}", predictions.len(), path.display()));
    Ok(())
}

fn windows(config: &RunConfig) -> Result<Vec<ChangeWindow>, CliError> {
    match &config.windows {
        Some(path) => read_windows(open(path)?).data_err(path),
        None => Ok(default_windows()),
    }
}

fn change_report(
    config: &RunConfig,
    out: &Output,
    prepared: &Prepared,
    ds: &Dataset,
    spec: &ModelSpec,
) -> Result<Vec<ChangeEntry>, CliError> {
    let windows = windows(config)?;
    let cv = cross_validate(spec, ds, config.folds, config.seed).map_err(|e| model_error(prepared, e))?;
    let entries = change_report_from_predictions(
        ds,
        &cv.predictions,
        &prepared.screened.series,
        &prepared.screened.catalog,
        &windows,
    )
    .internal()?;
    out.csv("change_report.csv", &format!("baseline={BASELINE}"), |buf| {
        write_change_csv(buf, &entries)
    })?;
    #[derive(Serialize)]
    struct ChangeReport<'a> {
        spec: &'a ModelSpec,
        entries: &'a [ChangeEntry],
    }
    out.json(
        "change_report.json",
        Some(BASELINE),
        ChangeReport {
            spec,
            entries: &entries,
        },
    )?;
    Ok(entries)
}

pub fn report(config: &RunConfig, spec: &ModelSpec) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    let ds = dataset(config, &out, &prepared, TargetKind::Count)?;
    let entries = change_report(config, &out, &prepared, &ds, spec)?;
    log(format!("report: {} entries", entries.len()));
    Ok(())
}

pub fn pipeline(config: &RunConfig) -> Result<(), CliError> {
    let out = Output::new(config)?;
    let prepared = prepare(config)?;
    write_ingest(&out, &prepared)?;
    write_screening(&out, &prepared)?;

    let mut rows = Vec::new();
    let mut count_data = None;
    for &target in &config.targets {
        let ds = dataset(config, &out, &prepared, target)?;
        for &algorithm in &config.algorithms {
            let spec = if algorithm == Algorithm::Ols {
                let spec = ModelSpec::ols();
                let cv =
                    cross_validate(&spec, &ds, config.folds, config.seed).map_err(|e| model_error(&prepared, e))?;
                write_cv(&out, &spec, target, &cv)?;
                rows.push(ComparisonRow::from_cv(algorithm, &cv, target));
                log(format!("ols {}: mean R² {:.4}", target.as_str(), cv.mean.r_squared));
                spec
            } else {
                let grid = run_grid(config, &out, &prepared, &ds, algorithm)?;
                rows.push(ComparisonRow::from_grid(&grid, target));
                grid.best_spec()
            };
            let model = train_model(&spec, &ds, config.seed).map_err(|e| model_error(&prepared, e))?;
            write_model(&out, &model)?;
        }
        if target == TargetKind::Count {
            count_data = Some(ds);
        }
    }

    let ranked = select_best(rows);
    out.csv("comparison.csv", "", |buf| comparison_table(buf, &ranked))?;
    out.json("comparison.json", None, &ranked)?;
    for r in &ranked {
        log(format!(
            "  {:<12} {:<10} R² {:>8.4}  MSE {:>10.4}",
            r.algorithm.as_str(),
            r.target.as_str(),
            r.r_squared,
            r.mse
        ));
    }

    if let Some(ds) = count_data {
        let best = ranked
            .iter()
            .find(|r| r.target == TargetKind::Count)
            .expect("count target was evaluated");
        let spec = ModelSpec::new(best.algorithm, best.depth, best.estimators.unwrap_or(1));
        change_report(config, &out, &prepared, &ds, &spec)?;
    }
    log(format!("pipeline: outputs in {}", out.dir.display()));
    Ok(())
}
