//! `dwellcut`: synthetic click logs, mixture fitting, accidental-click
//! thresholds, billing discounts, filtering and conversion validation.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or contract error, 4 fit
//! failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dwellcut_core::Error;

#[derive(Parser, Debug)]
#[command(name = "dwellcut", version, about = "Accidental ad-click detection from dwell time")]
pub struct Cli {
    /// TOML settings file; flags given on the command line override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Print a human-readable summary to stderr.
    #[arg(long, global = true)]
    pub summary: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a click log and ground truth from a scenario file.
    Synth(SynthArgs),
    /// Fit a mixture model to every (ad, app) pair of a click log.
    Fit(FitCmd),
    /// Derive accidental-click thresholds from fitted models.
    Thresholds(ThresholdsCmd),
    /// Compute per-app discount factors and the revenue impact.
    Discount(DiscountCmd),
    /// Split a click log into kept and accidental clicks.
    Filter(FilterCmd),
    /// Test dwell time as a conversion signal.
    Validate(ValidateCmd),
    /// Run synth, fit, thresholds, discount and filter in one go.
    Pipeline(PipelineCmd),
}

#[derive(Args, Debug, Clone)]
pub struct FormatArg {
    /// Click-log format; inferred from the file extension when omitted.
    #[arg(long, value_parser = ["csv", "jsonl"])]
    pub format: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Overrides the scenario's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Args, Debug, Clone, Default)]
pub struct FitArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_parser = ["aic", "bic"])]
    pub criterion: Option<String>,
    /// Dwell values above this many seconds are dropped before fitting.
    #[arg(long)]
    pub outlier_cap: Option<f64>,
    /// Minimum clicks for an (ad, app) pair to be fitted.
    #[arg(long)]
    pub min_clicks: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct FitCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub format: FormatArg,
    #[command(flatten)]
    pub fit: FitArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ThresholdArgs {
    #[arg(long, value_parser = ["pivot", "per-app"])]
    pub mode: Option<String>,
    #[arg(long)]
    pub pivot_app: Option<String>,
    #[arg(long, value_parser = ["median", "mean"])]
    pub aggregate: Option<String>,
    /// Per-ad statistic of the first component.
    #[arg(long, value_parser = ["median", "mean"])]
    pub statistic: Option<String>,
    /// Threshold in seconds for apps without usable fits.
    #[arg(long)]
    pub default_threshold: Option<f64>,
    /// Include per-app and pooled eCDFs of per-ad thresholds.
    #[arg(long)]
    pub ecdf: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ThresholdsCmd {
    /// Models file written by `dwellcut fit`.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DiscountArgs {
    #[arg(long, value_parser = ["mle", "normal", "agresti-coull"])]
    pub method: Option<String>,
    #[arg(long)]
    pub z: Option<f64>,
    /// Bill the pivot's accidental clicks at the best other-app factor once
    /// it has more than this many.
    #[arg(long)]
    pub pivot_alert: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct DiscountCmd {
    #[arg(long)]
    pub input: PathBuf,
    /// Thresholds report written by `dwellcut thresholds`.
    #[arg(long)]
    pub thresholds: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum clicks for an (ad, app) pair to count towards its app's rate.
    #[arg(long)]
    pub min_clicks: Option<u64>,
    #[command(flatten)]
    pub format: FormatArg,
    #[command(flatten)]
    pub discount: DiscountArgs,
}

#[derive(Args, Debug, Clone)]
pub struct FilterCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub thresholds: PathBuf,
    /// Kept clicks.
    #[arg(long)]
    pub out: PathBuf,
    /// Removed clicks; defaults to `<out>.removed`.
    #[arg(long)]
    pub removed: Option<PathBuf>,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Args, Debug, Clone)]
pub struct ValidateCmd {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub format: FormatArg,
}

#[derive(Args, Debug, Clone)]
pub struct PipelineCmd {
    #[arg(long, default_value = "scenarios/anchor_network.toml")]
    pub scenario: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub format: FormatArg,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[command(flatten)]
    pub discount: DiscountArgs,
    /// Click floor per (ad, app) pair for discount rates.
    #[arg(long)]
    pub discount_min_clicks: Option<u64>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(Error::FitFailure(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("dwellcut: {msg}"),
                CliError::Core(err) => eprintln!("dwellcut: {err}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
