//! Command-line entry point for the construction-impact pipeline.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qol_impact::evaluate::Algorithm;
use qol_impact::features::TargetKind;

use config::{parse_range, ParseModeName, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "qol-impact",
    version,
    about = "Screen 311 complaint types around construction projects, model complaint changes and report them"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand. Flags override the config file.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random stream (synthesis, folds, bootstraps, boosting)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid search and forests
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory
    #[arg(long = "out", global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    /// 311 service request CSV
    #[arg(long, global = true, value_name = "PATH")]
    requests: Option<PathBuf>,
    /// Construction project CSV (id, start, duration, zip)
    #[arg(long, global = true, value_name = "PATH")]
    projects: Option<PathBuf>,
    /// Complaint type to QoL indicator CSV
    #[arg(long, global = true, value_name = "PATH")]
    whitelist: Option<PathBuf>,
    /// Change-report windows CSV (complaint_type, window_start, window_end)
    #[arg(long, global = true, value_name = "PATH")]
    windows: Option<PathBuf>,
    /// Significance level of the pre/post screening test
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// A type must occur in more than this many projects
    #[arg(long, global = true)]
    frequency_threshold: Option<usize>,
    /// Additive smoothing of the log-ratio target
    #[arg(long, global = true)]
    smoothing: Option<f64>,
    /// Cross-validation folds
    #[arg(long, global = true)]
    folds: Option<usize>,
    /// Malformed request rows: strict aborts, lenient skips and counts them
    #[arg(long, global = true, value_enum)]
    parse_mode: Option<ParseModeArg>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ParseModeArg {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum TargetArg {
    Count,
    #[value(alias = "log_ratio")]
    LogRatio,
}

impl From<TargetArg> for TargetKind {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Count => TargetKind::Count,
            TargetArg::LogRatio => TargetKind::LogRatio,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AlgorithmArg {
    Ols,
    Dt,
    Rf,
    #[value(alias = "rf_adaboost")]
    RfAdaboost,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Ols => Algorithm::Ols,
            AlgorithmArg::Dt => Algorithm::Dt,
            AlgorithmArg::Rf => Algorithm::Rf,
            AlgorithmArg::RfAdaboost => Algorithm::RfAdaboost,
        }
    }
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value = "rf-adaboost")]
    algorithm: AlgorithmArg,
    #[arg(long, value_enum, default_value = "count")]
    target: TargetArg,
    /// Maximum tree depth (unlimited when omitted)
    #[arg(long)]
    depth: Option<usize>,
    /// Number of estimators for rf and rf-adaboost
    #[arg(long, default_value_t = 10)]
    estimators: usize,
}

/// One grid axis parsed from a single argument; the alias keeps clap from
/// treating the field as a repeated flag.
type Axis = Vec<usize>;

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic project and request CSVs plus an oracle manifest
    Synth {
        /// Number of projects (overrides the config's synth section)
        #[arg(long)]
        n_projects: Option<usize>,
    },
    /// Parse and scope the inputs; write monthly counts and an ingest report
    Ingest,
    /// Screen complaint types (t-test, project frequency, whitelist)
    Select,
    /// Cross-validate one model and fit it on the full dataset
    Train(ModelArgs),
    /// Grid-search depth and number of estimators with k-fold cross-validation
    Tune {
        #[arg(long, value_enum, default_value = "rf-adaboost")]
        algorithm: AlgorithmArg,
        #[arg(long, value_enum, default_value = "count")]
        target: TargetArg,
        /// Depth axis, e.g. 1-20 or 2,4,8
        #[arg(long, value_parser = parse_range)]
        depths: Option<Axis>,
        /// Estimator axis, e.g. 1-20
        #[arg(long = "estimators", value_parser = parse_range)]
        estimator_range: Option<Axis>,
    },
    /// Predict a dataset CSV with a trained model JSON
    Predict {
        #[arg(long, value_name = "PATH")]
        model: PathBuf,
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
    },
    /// Predicted-vs-actual percentage change per type and window
    Report(ModelArgs),
    /// Run ingest, selection, tuning, comparison and the change report
    Pipeline,
}

fn resolve_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if common.jobs.is_some() {
        config.jobs = common.jobs;
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = dir.clone();
    }
    macro_rules! override_some {
        ($($field:ident),*) => {
            $(if let Some(v) = &common.$field {
                config.$field = Some(v.clone());
            })*
        };
    }
    override_some!(requests, projects, whitelist, windows);
    if let Some(v) = common.alpha {
        config.alpha = v;
    }
    if let Some(v) = common.frequency_threshold {
        config.frequency_threshold = v;
    }
    if let Some(v) = common.smoothing {
        config.smoothing = v;
    }
    if let Some(v) = common.folds {
        config.folds = v;
    }
    if let Some(m) = common.parse_mode {
        config.parse_mode = match m {
            ParseModeArg::Strict => ParseModeName::Strict,
            ParseModeArg::Lenient => ParseModeName::Lenient,
        };
    }
    config.synth.seed = config.seed;
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = resolve_config(&cli.common)?;
    if let Some(jobs) = config.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(CliError::internal)?;
    }
    match cli.command {
        Command::Synth { n_projects } => {
            if let Some(n) = n_projects {
                config.synth.n_projects = n;
            }
            commands::synth(&config)
        }
        Command::Ingest => commands::ingest(&config),
        Command::Select => commands::select(&config),
        Command::Train(m) => commands::train(&config, &model_spec(&m), m.target.into()),
        Command::Tune {
            algorithm,
            target,
            depths,
            estimator_range,
        } => {
            if let Some(d) = depths {
                config.grid.depths = d;
            }
            if let Some(e) = estimator_range {
                config.grid.estimators = e;
            }
            commands::tune(&config, algorithm.into(), target.into())
        }
        Command::Predict { model, dataset } => commands::predict(&config, &model, &dataset),
        Command::Report(m) => {
            if !matches!(m.target, TargetArg::Count) {
                return Err(CliError::Usage("change reports need the count target".into()));
            }
            commands::report(&config, &model_spec(&m))
        }
        Command::Pipeline => commands::pipeline(&config),
    }
}

fn model_spec(m: &ModelArgs) -> qol_impact::evaluate::ModelSpec {
    qol_impact::evaluate::ModelSpec::new(m.algorithm.into(), m.depth, m.estimators)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
