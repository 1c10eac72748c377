//! Command-line surface. Every tunable is optional here so that values can
//! be layered: flags, then `UQLINE_*` environment variables (both resolved
//! by clap), then the `--config` TOML file, then built-in defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use uqline_core::{DebiasMode, FitOn, Measure, QualityDirection};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "uqline",
    version,
    about = "Length-debiased uncertainty scores and prediction-rejection evaluation"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score generation records with uncertainty measures.
    Measures(MeasuresArgs),
    /// Fit length trends of scores (and quality) and optionally plot them.
    Trends(TrendsArgs),
    /// Fit a length-debiasing model on the training split.
    Fit(FitArgs),
    /// Apply a fitted model to records or scores.
    Apply(ApplyArgs),
    /// Evaluate prediction-rejection ratios of scores against quality.
    Prr(PrrArgs),
    /// Generate a synthetic dataset with planted length trends.
    Synth(SynthArgs),
    /// Join base and debiased PRR runs into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSel {
    Train,
    Test,
    All,
}

/// Loads an optional TOML config into `T`.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read_failure(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
}

/// Fills every unset field from `file`.
macro_rules! layer {
    ($flags:expr, $file:expr; $($field:ident),* $(,)?) => {
        $( if $flags.$field.is_none() { $flags.$field = $file.$field; } )*
    };
}

pub(crate) use layer;

fn parse_degree(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(d @ 1..=3) => Ok(d),
        _ => Err(format!("degree must be 1, 2 or 3, got '{s}'")),
    }
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasuresArgs {
    /// Generation records (JSONL).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated measures [default: all].
    #[arg(long, value_delimiter = ',')]
    pub measures: Option<Vec<Measure>>,
    /// Score CSV to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Fail on the first bad record instead of skipping it.
    #[arg(long, env = "UQLINE_STRICT", num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    #[arg(long, env = "UQLINE_QUALITY_DIRECTION")]
    pub quality_direction: Option<QualityDirection>,
    /// TOML file with defaults for any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendsArgs {
    /// Score CSV.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Records whose quality trend is reported alongside the scores.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Number of length bins [default: 20].
    #[arg(long, env = "UQLINE_BINS")]
    pub bins: Option<usize>,
    /// Fit on raw points or on bin means [default: raw].
    #[arg(long, env = "UQLINE_FIT_ON")]
    pub fit_on: Option<FitOn>,
    /// Polynomial degree of the trend [default: 1].
    #[arg(long, env = "UQLINE_DEGREE", value_parser = parse_degree)]
    pub degree: Option<usize>,
    /// Directory for one SVG per measure.
    #[arg(long, env = "UQLINE_SVG_DIR")]
    pub svg_dir: Option<PathBuf>,
    /// Dataset label [default: from record metadata].
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, env = "UQLINE_QUALITY_DIRECTION")]
    pub quality_direction: Option<QualityDirection>,
    /// Trend report JSON to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    /// Generation records (JSONL).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Measure to debias.
    #[arg(long)]
    pub measure: Option<Measure>,
    /// Debiasing mode [default: unsupervised].
    #[arg(long, env = "UQLINE_MODE")]
    pub mode: Option<DebiasMode>,
    /// Polynomial degree [default: 1].
    #[arg(long, env = "UQLINE_DEGREE", value_parser = parse_degree)]
    pub degree: Option<usize>,
    /// Fraction of records used for fitting [default: 0.5].
    #[arg(long, env = "UQLINE_TRAIN_FRAC")]
    pub train_frac: Option<f64>,
    /// Split seed [default: 0].
    #[arg(long, env = "UQLINE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "UQLINE_QUALITY_DIRECTION")]
    pub quality_direction: Option<QualityDirection>,
    #[arg(long, env = "UQLINE_STRICT", num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// Model JSON to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApplyArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Records to score and debias (the model's split is reproduced).
    #[arg(long, conflicts_with = "scores")]
    pub input: Option<PathBuf>,
    /// Score CSV to debias directly.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Which side of the model's split to emit [default: test].
    #[arg(long)]
    pub split: Option<SplitSel>,
    #[arg(long, env = "UQLINE_QUALITY_DIRECTION")]
    pub quality_direction: Option<QualityDirection>,
    #[arg(long, env = "UQLINE_STRICT", num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// Debiased score CSV to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrrArgs {
    /// Records providing quality labels.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Score CSV to evaluate.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Restrict to these measures [default: every measure in the scores].
    #[arg(long, value_delimiter = ',')]
    pub measures: Option<Vec<Measure>>,
    /// Records to evaluate on [default: all].
    #[arg(long)]
    pub split: Option<SplitSel>,
    #[arg(long, env = "UQLINE_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "UQLINE_TRAIN_FRAC")]
    pub train_frac: Option<f64>,
    /// Label for the scores: base, unsupervised or quality-aware [default: base].
    #[arg(long)]
    pub mode: Option<String>,
    /// Dataset label [default: from record metadata].
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long, env = "UQLINE_QUALITY_DIRECTION")]
    pub quality_direction: Option<QualityDirection>,
    #[arg(long, env = "UQLINE_STRICT", num_args = 0..=1, default_missing_value = "true")]
    pub strict: Option<bool>,
    /// Directory for one rejection-curve SVG per measure.
    #[arg(long, env = "UQLINE_SVG_DIR")]
    pub svg_dir: Option<PathBuf>,
    /// PRR run JSON to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct SynthArgs {
    /// Generator config (TOML); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, env = "UQLINE_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub min_tokens: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub uncertainty_slope: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub quality_slope: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub signal_strength: Option<f64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub difficulty_scale: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub base_uncertainty: Option<f64>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Records JSONL to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Planted-truth sidecar JSONL [default: <output>.truth.jsonl].
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportArgs {
    /// PRR run JSON for raw scores (repeatable).
    #[arg(long)]
    pub base: Vec<PathBuf>,
    /// PRR run JSON for debiased scores (repeatable).
    #[arg(long)]
    pub line: Vec<PathBuf>,
    /// Comparison JSON to write.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Wide `base / line` table CSV.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Per-measure mean improvement CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}
