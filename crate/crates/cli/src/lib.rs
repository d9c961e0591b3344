//! The `delta-scope` command-line tool.

pub mod artifact;
pub mod bench;
pub mod commands;
pub mod report;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use delta_scope::LossKind;

/// Residual above which bounds built from a model are flagged as unreliable.
pub const RESIDUAL_WARNING: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "delta-scope", version, about = "Bounds on retrained linear classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset in libsvm format.
    Gen(GenArgs),
    /// Train an L2-regularized linear classifier.
    Train(TrainArgs),
    /// Bound every coefficient of the model retrained after an update.
    CoefSensitivity(CoefArgs),
    /// Bound the decision score of test instances after an update.
    LabelSensitivity(LabelArgs),
    /// Leave-one-out cross-validation, optionally over a parameter grid.
    Loocv(LoocvArgs),
    /// Tightness and timing sweeps, one CSV row per repeat.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Loss {
    Logistic,
    L2hinge,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::Logistic => LossKind::Logistic,
            Loss::L2hinge => LossKind::L2Hinge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Op1,
    Op2,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sweep {
    /// Vary (n_A + n_R) as a fraction of the dataset size.
    Fraction,
    /// Vary n_old as a fraction of the dataset size with n_A + n_R fixed.
    Size,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    /// Distance between the two class means.
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: Loss,
    #[arg(long)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Append a constant-1 feature (regularized like the rest).
    #[arg(long)]
    pub add_bias: bool,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the report; defaults to stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

/// A trained model plus the modification applied to its training set.
#[derive(Debug, Args)]
pub struct UpdateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// The model's training set; required with --remove.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Instances to add, in libsvm format.
    #[arg(long)]
    pub add: Option<PathBuf>,
    /// 0-based row indices of --data to remove, one per line.
    #[arg(long)]
    pub remove: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CoefArgs {
    #[command(flatten)]
    pub update: UpdateArgs,
    /// Defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[command(flatten)]
    pub update: UpdateArgs,
    /// Instances whose labels are checked, in libsvm format.
    #[arg(long)]
    pub test: PathBuf,
    /// Also write per-instance (lower, upper, decision) as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Retrain on the updated data and compare every decided label.
    #[arg(long)]
    pub check_retrain: bool,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct LoocvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: Loss,
    #[arg(long, conflicts_with = "grid", required_unless_present = "grid")]
    pub lambda: Option<f64>,
    /// Powers of two for lambda, `LO:HI` inclusive, e.g. `-20:0`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    /// Powers of two for an RBF kernel width, `LO:HI`; each gamma is
    /// crossed with every lambda.
    #[arg(long, allow_hyphen_values = true)]
    pub rbf_gamma: Option<String>,
    /// Number of RBF centres sampled from the data.
    #[arg(long, default_value_t = 100)]
    pub rbf_centers: usize,
    #[arg(long, value_enum, default_value = "op1")]
    pub mode: Mode,
    /// Abandon grid cells whose error lower bound exceeds the best so far.
    #[arg(long)]
    pub prune: bool,
    /// Solve undecided folds in order of increasing margin.
    #[arg(long)]
    pub order: bool,
    /// Tolerance for the per-fold fallback solves.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub add_bias: bool,
    /// Seeds the RBF centre sample.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include one entry per fold in the report (single lambda only).
    #[arg(long)]
    pub folds: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dataset file; without it a synthetic set is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Test instances for the label check; without it the synthetic
    /// generator (or the dataset itself) is used.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 1_000)]
    pub n_test: usize,
    #[arg(long, default_value_t = 1.0)]
    pub separation: f64,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: Loss,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.1, 1.0])]
    pub lambda: Vec<f64>,
    #[arg(long, value_enum, default_value = "fraction")]
    pub sweep: Sweep,
    /// (n_A + n_R) as fractions of the dataset size, for the fraction sweep.
    #[arg(long, value_delimiter = ',',
          default_values_t = [0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01])]
    pub fractions: Vec<f64>,
    /// n_old as fractions of the dataset size, for the size sweep.
    #[arg(long, value_delimiter = ',',
          default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99])]
    pub sizes: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long)]
    pub add_bias: bool,
    /// Skip the warm-started retrain (retrain_time is left empty).
    #[arg(long)]
    pub no_retrain: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
}

/// Caps the global rayon pool from `DELTA_SCOPE_THREADS`.
pub fn configure_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("DELTA_SCOPE_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("DELTA_SCOPE_THREADS must be a positive integer, got {raw:?}"))?;
        if n == 0 {
            anyhow::bail!("DELTA_SCOPE_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Gen(a) => commands::gen(&a, args),
        Command::Train(a) => commands::train(&a, args),
        Command::CoefSensitivity(a) => commands::coef_sensitivity(&a, args),
        Command::LabelSensitivity(a) => commands::label_sensitivity(&a, args),
        Command::Loocv(a) => commands::loocv(&a, args),
        Command::Bench(a) => bench::run(&a, args),
    }
}
