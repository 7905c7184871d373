//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fastweights::linalg::SpectralPolicy;

use crate::verify::Suite;

#[derive(Debug, Parser)]
#[command(
    name = "fastweights",
    version,
    about = "Compile, update, evaluate and verify closed-form fast weights"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compile a key-value dataset into fast weights (FWKV kind 2).
    Compile(CompileArgs),
    /// Fold a new batch into existing fast weights.
    Update(UpdateArgs),
    /// Classification accuracy on full data or k-way n-shot episodes.
    Eval(EvalArgs),
    /// Time closed-form compilation against gradient descent.
    Bench(BenchArgs),
    /// Run seeded oracle property suites.
    Verify(VerifyArgs),
    /// Write a synthetic labeled dataset.
    Gen(GenArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Table,
    /// One JSON object per line.
    Structured,
}

/// How to read CSV input; FWKV files are self-describing.
#[derive(Clone, Debug, Default, Args)]
pub struct CsvArgs {
    /// Key dimension of CSV input.
    #[arg(long = "d-x")]
    pub d_x: Option<usize>,
    /// Value dimension of CSV input (values mode).
    #[arg(long = "d-y", conflicts_with = "labeled")]
    pub d_y: Option<usize>,
    /// CSV rows end in a class label instead of value fields.
    #[arg(long)]
    pub labeled: bool,
}

#[derive(Clone, Debug, Args)]
pub struct SpectralArgs {
    /// Threshold exponent: ε = 1/N^alpha [default: 1].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Explicit relative threshold in [0, 1); overrides --alpha.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl SpectralArgs {
    pub fn policy(&self) -> fastweights::Result<SpectralPolicy> {
        let policy = SpectralPolicy {
            alpha: self.alpha.unwrap_or(SpectralPolicy::default().alpha),
            explicit_epsilon: self.epsilon,
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Args)]
pub struct CompileArgs {
    /// Dataset (.fwkv or .csv).
    pub input: PathBuf,
    /// Where to write the weights.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Also store sufficient statistics so `update --exact` can extend them.
    #[arg(long)]
    pub stats: bool,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct UpdateArgs {
    /// Weights file, rewritten in place.
    pub weights: PathBuf,
    /// New batch (.fwkv or .csv).
    pub batch: PathBuf,
    /// Factor applied to the running count before folding in the batch.
    #[arg(long, default_value_t = 1.0)]
    pub discount: f64,
    /// Use sufficient statistics instead of interpolation.
    #[arg(long)]
    pub exact: bool,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    #[value(name = "fast_weights")]
    FastWeights,
    #[value(name = "knn")]
    Knn,
    #[value(name = "softmax_memory")]
    SoftmaxMemory,
    #[value(name = "centered_linear")]
    CenteredLinear,
    /// Uncentered linear attention.
    #[value(name = "linear")]
    Linear,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Labeled dataset (FWKV kind 1 or labeled CSV).
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::FastWeights)]
    pub method: MethodArg,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Softmax memory temperature.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Neighbours for knn, clamped to the support size.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Prior pseudo-count; 0 disables the prior.
    #[arg(long)]
    pub n0: Option<f64>,
    /// Prior weights (FWKV kind 2); defaults to the identity when d_x = d_y.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    /// Classification defaults: alpha 0.8 and n0 = 40 per class unless set.
    #[arg(long)]
    pub classification_defaults: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Separate labeled query set for full-data evaluation; without it the
    /// dataset is scored against itself.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Classes per episode; enables episodic evaluation.
    #[arg(long)]
    pub way: Option<usize>,
    /// Support examples per class.
    #[arg(long)]
    pub shot: Option<usize>,
    /// Query examples per class.
    #[arg(long, default_value_t = 20)]
    pub queries: usize,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset (.fwkv or .csv).
    pub dataset: PathBuf,
    #[command(flatten)]
    pub spectral: SpectralArgs,
    /// Timed runs per path; the median is reported.
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// GD stops when the gradient norm falls by this factor.
    #[arg(long, default_value_t = 1e-4)]
    pub gd_tolerance: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_steps: usize,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub spread: f64,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Length of a direction shared by all keys.
    #[arg(long, default_value_t = 0.0)]
    pub common_offset: f64,
    /// Fraction of labels replaced by a different class.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
