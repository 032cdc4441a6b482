use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use crate::parse::{parse_compute, parse_count, parse_range};

#[derive(Debug, Parser)]
#[command(
    name = "nqs",
    version,
    about = "Fit, evaluate and allocate with the noisy quadratic system loss model"
)]
pub struct Cli {
    /// Worker threads for fitting, simulation and search.
    #[arg(long, global = true, env = "NQS_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the loss model to a dataset and write a report.
    Fit(FitArgs),
    /// Predict final losses from a report.
    Predict(PredictArgs),
    /// Best (N, B, K) under resource constraints.
    Allocate(AllocateArgs),
    /// Loss along a fixed-compute slice.
    Isoflop(IsoflopArgs),
    /// Monte Carlo simulation of one training run.
    Simulate(SimulateArgs),
    /// Synthetic dataset from known parameters.
    Generate(GenerateArgs),
    /// Fit the two-term baseline.
    BaselineChinchilla(BaselineArgs),
    /// Subsampling prediction intervals.
    Bootstrap(BootstrapArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Objective {
    Huber,
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum ModelKind {
    #[default]
    Nqs,
    Chinchilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum TimeRuleArg {
    /// T = N·K
    #[default]
    Nk,
    /// T = K
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum FeedbackArg {
    #[default]
    Expected,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum DesignKind {
    #[default]
    Isoflops,
    Isotokens,
    Both,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Args)]
pub struct FitOverrides {
    /// Fit configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random initializations.
    #[arg(long)]
    pub inits: Option<usize>,
    /// Adam iterations per initialization.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    /// Huber threshold on log-loss residuals.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long, value_enum)]
    pub objective: Option<Objective>,
    /// Gauss-Newton refinement iterations per initialization.
    #[arg(long)]
    pub polish_iters: Option<usize>,
    /// Keep records whose batch is too small to reach the noise floor.
    #[arg(long, conflicts_with = "filter_margin")]
    pub no_filter: bool,
    #[arg(long)]
    pub filter_margin: Option<f64>,
    /// Fit on every record, including those tagged holdout.
    #[arg(long)]
    pub all_records: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOverrides,
    /// Small-batch runs used to choose the initial weight norm.
    #[arg(long)]
    pub small_batch_data: Option<PathBuf>,
    /// Candidate initial norms, comma separated.
    #[arg(long, value_delimiter = ',', requires = "small_batch_data")]
    pub s_grid: Option<Vec<f64>>,
    /// Doublings on each side of the default anchor when no grid is given.
    #[arg(
        long,
        default_value_t = 4,
        requires = "small_batch_data",
        conflicts_with = "s_grid"
    )]
    pub s_half_width: i32,
    /// Report file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-record predictions at the fitted parameters.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("single").args(["n", "batch", "steps"]).multiple(true).conflicts_with("data")))]
pub struct PredictArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub model: ModelKind,
    #[arg(long, value_parser = parse_count, required_unless_present = "data")]
    pub n: Option<u64>,
    #[arg(long, value_parser = parse_count, required_unless_present = "data")]
    pub batch: Option<u64>,
    #[arg(long, value_parser = parse_count, required_unless_present = "data")]
    pub steps: Option<u64>,
    #[arg(long, value_parser = parse_count, required_unless_present = "data")]
    pub seq_len: Option<u64>,
    /// Dataset whose runs are predicted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Constraints {
    #[arg(long, value_parser = parse_count)]
    pub seq_len: u64,
    /// Time budget, in units set by --time-rule.
    #[arg(long, value_parser = parse_compute)]
    pub time_max: Option<f64>,
    #[arg(long, value_enum, default_value_t)]
    pub time_rule: TimeRuleArg,
    /// Bound on B·N.
    #[arg(long, value_parser = parse_compute)]
    pub memory_max: Option<f64>,
    /// Bound on tokens B·K·seq_len.
    #[arg(long, value_parser = parse_compute)]
    pub data_max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub model: ModelKind,
    /// Compute budget in FLOPs; a PF suffix means PetaFLOPs.
    #[arg(long, value_parser = parse_compute)]
    pub compute_max: f64,
    #[command(flatten)]
    pub constraints: Constraints,
    #[arg(long, value_parser = parse_range, default_value = "1e3:1e12")]
    pub n_range: (u64, u64),
    #[arg(long, value_parser = parse_range, default_value = "1:1e5")]
    pub batch_range: (u64, u64),
    #[arg(long, value_parser = parse_range, default_value = "1:1e7")]
    pub steps_range: (u64, u64),
    /// Grid points per decade on each axis.
    #[arg(long, default_value_t = 4)]
    pub per_decade: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IsoflopArgs {
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, value_enum, default_value_t)]
    pub model: ModelKind,
    /// Compute budget in FLOPs; a PF suffix means PetaFLOPs.
    #[arg(long, value_parser = parse_compute)]
    pub compute: f64,
    #[command(flatten)]
    pub constraints: Constraints,
    #[arg(long, value_parser = parse_range, default_value = "1e3:1e12")]
    pub n_range: (u64, u64),
    #[arg(long, default_value_t = 16)]
    pub per_decade: u32,
    /// Fixed batch size.
    #[arg(long, value_parser = parse_count, conflicts_with = "batches")]
    pub batch: Option<u64>,
    /// Best of these batch sizes for each model size.
    #[arg(long, value_delimiter = ',', value_parser = parse_count)]
    pub batches: Option<Vec<u64>>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("params").args(["theta", "report"]).required(true)))]
pub struct SimulateArgs {
    /// Loss-model parameters `p,P,q,Q,r,R,e`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub theta: Option<Vec<f64>>,
    /// Take the parameters from a fit report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_parser = parse_count)]
    pub n: u64,
    #[arg(long, value_parser = parse_count)]
    pub batch: u64,
    #[arg(long, value_parser = parse_count)]
    pub steps: u64,
    #[arg(long, value_parser = parse_count, default_value_t = 1)]
    pub seq_len: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial squared weight norm; enables learning-rate feedback.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long, value_enum, default_value_t, requires = "s")]
    pub feedback: FeedbackArg,
    /// Total simulated modes (default 4N).
    #[arg(long, value_parser = parse_count)]
    pub latent_modes: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("params").args(["theta", "report"]).required(true)))]
pub struct GenerateArgs {
    /// Loss-model parameters `p,P,q,Q,r,R,e`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    pub theta: Option<Vec<f64>>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub design: DesignKind,
    /// Design file (TOML) in place of the design flags.
    #[arg(long, conflicts_with = "design")]
    pub config: Option<PathBuf>,
    /// IsoFLOPs levels, each with four times the compute of the last.
    #[arg(long, default_value_t = 9)]
    pub levels: usize,
    #[arg(long, value_parser = parse_compute, default_value = "412316860416")]
    pub base_compute: f64,
    #[arg(long, default_value_t = 5)]
    pub models_per_level: usize,
    #[arg(long, value_parser = parse_count, default_value = "4096")]
    pub n_start: u64,
    #[arg(long, default_value_t = 4.0)]
    pub n_factor: f64,
    #[arg(long, value_parser = parse_count, default_value = "32")]
    pub batch: u64,
    #[arg(long, value_parser = parse_count, default_value = "128")]
    pub seq_len: u64,
    #[arg(long)]
    pub holdout_from_level: Option<usize>,
    /// Model sizes of the batch/step plane.
    #[arg(long, value_delimiter = ',', value_parser = parse_count, default_value = "16384,262144")]
    pub bk_n_params: Vec<u64>,
    #[arg(long, value_parser = parse_count, default_value = "16777216")]
    pub bk_base_tokens: u64,
    #[arg(long, default_value_t = 3)]
    pub bk_levels: usize,
    #[arg(long, value_delimiter = ',', value_parser = parse_count, default_value = "8,16,32,64,128")]
    pub bk_batches: Vec<u64>,
    #[arg(long)]
    pub bk_holdout_from_level: Option<usize>,
    /// Standard deviation of multiplicative log-normal noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate losses with weight-norm feedback from this initial norm.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOverrides,
    /// Existing report to add the baseline to.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Print the compute-optimal split at these budgets.
    #[arg(long, value_delimiter = ',', value_parser = parse_compute)]
    pub compute: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_count, default_value = "128")]
    pub seq_len: u64,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub fit: FitOverrides,
    /// Runs to predict (defaults to the held-out records of --data).
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Fraction of records kept per trial.
    #[arg(long, default_value_t = 0.5)]
    pub frac: f64,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Report whose parameters seed every refit.
    #[arg(long)]
    pub warm_start: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
