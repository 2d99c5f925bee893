//! `testbandit`: command-line driver for budget-constrained test
//! prioritization. Every subcommand writes its artifacts plus a
//! `manifest.json` into `--out-dir`.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "testbandit", version, about = "Budget-constrained test prioritization: ranking, exploration and replay")]
pub struct Cli {
    /// Master seed; every random stream of the run is derived from it
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Key-value config file (policy keys, [arm], [schedule], [train] sections)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Directory receiving the artifacts and manifest.json
    #[arg(long, global = true, value_name = "PATH", default_value = "out")]
    pub out_dir: PathBuf,
    /// Only print errors
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a raw CSV into a normalized cohort plus a rejection report
    Ingest(IngestArgs),
    /// Generate a synthetic cohort from a scenario file
    Synth(SynthArgs),
    /// Weekly Pearson correlations of each feature with the label
    Correlate(CohortArgs),
    /// Train a ranking model on a week range
    Train(TrainArgs),
    /// Replay the cohort period by period under a testing policy
    Simulate(SimulateArgs),
    /// Recall for each exploration fraction and capacity
    Sweep(SweepArgs),
    /// Bootstrap confidence interval of mean weekly recall
    Bootstrap(BootstrapArgs),
    /// Report tables and plot data for one or more models
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw delimited file with a header row
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Value mapping file; defaults to the English vocabulary
    #[arg(long, value_name = "PATH")]
    pub mapping: Option<PathBuf>,
    /// Field delimiter
    #[arg(long, default_value_t = ',')]
    pub delimiter: char,
    /// Rows with an unknown symptom: treat the symptom as absent, or reject the row
    #[arg(long, value_enum, default_value_t = UnknownArg::AsAbsent)]
    pub unknown: UnknownArg,
    /// Keep only tests dated FROM:TO (YYYY-MM-DD:YYYY-MM-DD, inclusive)
    #[arg(long, value_name = "FROM:TO")]
    pub window: Option<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnknownArg {
    AsAbsent,
    Drop,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scenario file, or one of the built-ins: default, regime_shift, two_arm
    #[arg(long, value_name = "PATH|NAME", default_value = "default")]
    pub scenario: String,
    /// Override the scenario's records per week
    #[arg(long, value_name = "N")]
    pub n_per_week: Option<usize>,
    /// Override the scenario's week range (A-B)
    #[arg(long, value_name = "A-B")]
    pub weeks: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct CohortArgs {
    /// Normalized cohort CSV (as written by ingest or synth)
    #[arg(long, value_name = "PATH")]
    pub cohort: PathBuf,
    /// Value mapping for the cohort file, when it is not normalized
    #[arg(long, value_name = "PATH")]
    pub mapping: Option<PathBuf>,
    /// How results marked `other` are labeled
    #[arg(long, value_enum, default_value_t = LabelArg::ExcludeOther)]
    pub labels: LabelArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelArg {
    ExcludeOther,
    OtherAsNegative,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Training weeks (A-B)
    #[arg(long, value_name = "A-B")]
    pub weeks: String,
    /// Model family: rule, linear or poly2
    #[arg(long, default_value = "poly2")]
    pub kind: String,
    /// Regularization strength (overrides [train] lambda)
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Passes over the data (overrides [train] epochs)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Class weighting: none or balanced (overrides [train] class_weighting)
    #[arg(long)]
    pub class_weighting: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model file written by train, or `rule` for the rule-based scorer
    #[arg(long, value_name = "PATH|rule", default_value = "rule")]
    pub model: String,
    /// Evaluation weeks (A-B); default: all weeks after the model's training weeks
    #[arg(long, value_name = "A-B")]
    pub weeks: Option<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Tests per period (overrides config capacity)
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Share of capacity spent on exploration (overrides config exploration_fraction)
    #[arg(long, value_name = "RHO")]
    pub exploration_fraction: Option<f64>,
    /// Exploration sampler: uniform or thompson (overrides config sampler)
    #[arg(long)]
    pub sampler: Option<String>,
    /// Labels fed to retraining: all_labeled or exploration_only (overrides config retrain_on)
    #[arg(long)]
    pub retrain_on: Option<String>,
    /// Retrain after every N periods, 0 = never (overrides [schedule] retrain_every)
    #[arg(long, value_name = "N")]
    pub retrain_every: Option<usize>,
    /// Period length: week or day (overrides [schedule] period)
    #[arg(long)]
    pub period: Option<String>,
    /// Fully labeled weeks (A-B) used to train before the first replayed period
    #[arg(long, value_name = "A-B")]
    pub warm_start_weeks: Option<String>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Exploration fractions
    #[arg(long, value_name = "LIST", default_value = "0.3,0.4,0.5,0.6,0.7")]
    pub fractions: String,
    /// Weekly capacities
    #[arg(long, value_name = "LIST", default_value = "1000,2000,3000,4000,5000")]
    pub ks: String,
    /// Independent exploration draws averaged per cell
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Args, Debug)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Capacity per week
    #[arg(long)]
    pub k: usize,
    /// Bootstrap replicates
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Confidence level
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Models to tabulate, as PATH, NAME=PATH or `rule` (repeatable)
    #[arg(long = "model", value_name = "[NAME=]PATH|rule")]
    pub models: Vec<String>,
    /// Evaluation weeks (A-B); default: all weeks after every model's training weeks
    #[arg(long, value_name = "A-B")]
    pub weeks: Option<String>,
    /// Capacities
    #[arg(long, value_name = "LIST", default_value = "1000,2000,3000,4000,5000")]
    pub ks: String,
    /// Bootstrap replicates for confidence intervals, 0 = none
    #[arg(long, default_value_t = 0)]
    pub ci_replicates: usize,
    /// Simulation trace (trace.jsonl) to summarize
    #[arg(long, value_name = "PATH")]
    pub trace: Option<PathBuf>,
}

/// A fatal error with its exit code and diagnostic category.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub category: &'static str,
    pub detail: String,
}

impl CliError {
    pub fn usage(detail: impl Into<String>) -> Self {
        Self {
            code: 1,
            category: "usage",
            detail: detail.into(),
        }
    }

    pub fn data(category: &'static str, detail: impl Into<String>) -> Self {
        Self {
            code: 2,
            category,
            detail: detail.into(),
        }
    }

    pub fn internal(detail: impl Into<String>) -> Self {
        Self {
            code: 3,
            category: "internal",
            detail: detail.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.quiet { log::LevelFilter::Error } else { log::LevelFilter::Info })
        .format_target(false)
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.category, e.detail);
            ExitCode::from(e.code)
        }
    }
}
