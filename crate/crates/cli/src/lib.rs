//! Command-line front end: configuration, pipeline orchestration and
//! result files (JSON, CSV and SVG).

pub mod commands;
pub mod config;
mod output;
pub mod svg;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use condexp_core::data::SamplingMode;
use condexp_core::explain::DenominatorSource;
use condexp_core::synth::Fixture;
use condexp_core::ErrorCategory;

pub use config::{RunConfig, ValueFn};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] condexp_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 configuration, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Write { .. } => 3,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Numeric => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "condexp",
    version,
    about = "Conditional-expectation network explanations for tabular models"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Learning data CSV.
    #[arg(long, global = true)]
    pub train: Option<PathBuf>,
    /// Test data CSV.
    #[arg(long, global = true)]
    pub test: Option<PathBuf>,
    #[arg(long, global = true)]
    pub model_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the base regression network with Poisson deviance loss.
    FitBase(FitArgs),
    /// Fit the conditional-expectation surrogate of the base model.
    FitCen(FitCenArgs),
    /// Relative loss increase when dropping each feature.
    Drop1(DenominatorArgs),
    /// Sequential relative loss decrease along a feature order.
    Anova(AnovaArgs),
    /// Permutation importance.
    Vpi(VpiArgs),
    /// Partial dependence plot.
    Pdp(CurveArgs),
    /// Marginal conditional expectation plot.
    Mcep(CurveArgs),
    /// SHAP decomposition of the mean prediction.
    Shap(ShapArgs),
    /// SHAP decomposition of the deviance loss.
    LossShap(LossShapArgs),
    /// Write a synthetic fixture with its parameters and a run configuration.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitCenArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Relative tolerance for the mask donor.
    #[arg(long)]
    pub delta: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DenominatorArgs {
    #[arg(long, value_parser = parse_denominator)]
    pub denominator: Option<DenominatorSource>,
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    /// Comma-separated feature names.
    #[arg(long, value_delimiter = ',')]
    pub order: Option<Vec<String>>,
    #[command(flatten)]
    pub denominator: DenominatorArgs,
}

#[derive(Debug, Args)]
pub struct VpiArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub feature: String,
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SamplingArgs {
    /// Sampled coalitions; exact enumeration when omitted.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_sampling)]
    pub sampling: Option<SamplingMode>,
    #[arg(long)]
    pub big_weight: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "target")]
pub struct ShapTarget {
    /// Test row to decompose (waterfall).
    #[arg(long)]
    pub instance: Option<usize>,
    /// Number of random test rows for dependence plots.
    #[arg(long)]
    pub cases: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ShapArgs {
    #[command(flatten)]
    pub target: ShapTarget,
    #[arg(long, value_enum)]
    pub value_fn: Option<ValueFn>,
    #[arg(long)]
    pub background_size: Option<usize>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
}

#[derive(Debug, Args)]
pub struct LossShapArgs {
    #[arg(long)]
    pub n_cases: Option<usize>,
    #[command(flatten)]
    pub sampling: SamplingArgs,
    #[command(flatten)]
    pub denominator: DenominatorArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub fixture: Fixture,
    /// Learning rows; the fixture default when omitted.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 5000)]
    pub test_n: usize,
}

fn parse_denominator(s: &str) -> Result<DenominatorSource, String> {
    match s {
        "base" => Ok(DenominatorSource::Base),
        "surrogate" => Ok(DenominatorSource::Surrogate),
        _ => Err(format!("expected base or surrogate, got `{s}`")),
    }
}

fn parse_sampling(s: &str) -> Result<SamplingMode, String> {
    match s {
        "uniform" => Ok(SamplingMode::Uniform),
        "kernel-weighted" => Ok(SamplingMode::KernelWeighted),
        _ => Err(format!("expected uniform or kernel-weighted, got `{s}`")),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = cli.train {
        cfg.paths.train = Some(p);
    }
    if let Some(p) = cli.test {
        cfg.paths.test = Some(p);
    }
    if let Some(p) = cli.model_dir {
        cfg.paths.model_dir = p;
    }
    let out_flag = cli.out.clone();
    if let Some(p) = cli.out {
        cfg.paths.output_dir = p;
    }
    commands::dispatch(cli.command, cfg, out_flag)
}
