//! Command-line driver: fitting, prediction, tuning, explanation, synthetic
//! data and a scaling benchmark, plus the model file format.

pub mod commands;
pub mod config;
pub mod persist;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xrfm::XrfmError;

pub use commands::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] XrfmError),
}

impl CliError {
    /// 2 for usage, schema and configuration problems, 3 for numerical
    /// failures during fitting.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                XrfmError::NotPositiveDefinite { .. }
                | XrfmError::NoConvergence { .. }
                | XrfmError::SolveFailed(_)
                | XrfmError::EmptyValidation
                | XrfmError::LeafTooSmall { .. }
                | XrfmError::ZeroVariance => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "xrfm", version, about = "Tree-partitioned recursive feature machines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    pub fn parse_from_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<OsString> + Clone,
    {
        Self::try_parse_from(args)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for xrfm::leaf_rfm::Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Regression => Self::Regression,
            TaskArg::Classification => Self::Classification,
        }
    }
}

/// Training data options shared by `fit` and `tune`.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation CSV; when absent a fraction of the training file is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    #[arg(long)]
    pub target: String,
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Tree shape options.
#[derive(Debug, Clone, Args)]
pub struct TreeArgs {
    /// Maximum leaf size.
    #[arg(long, default_value_t = 2000)]
    pub leaf_size: usize,
    /// Rows sampled for each split model.
    #[arg(long, default_value_t = 5000)]
    pub split_samples: usize,
    /// Ridge of the split models.
    #[arg(long, default_value_t = 1e-3)]
    pub split_ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    LocalFeatures,
    SingleIndex,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a model with fixed hyperparameters.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tree: TreeArgs,
        /// TOML file of hyperparameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        hyper: config::HyperFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random search over leaf hyperparameters, per leaf.
    Tune {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        tree: TreeArgs,
        /// `talent`, `metatest` or a TOML file of distributions.
        #[arg(long, default_value = "talent")]
        space: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
        /// CSV of every (leaf, trial) result.
        #[arg(long)]
        log: PathBuf,
    },
    /// Per-leaf feature relevance from the stored AGOPs.
    Explain {
        #[arg(long)]
        model: PathBuf,
        /// Leaf index or `all`.
        #[arg(long, default_value = "all")]
        leaf: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, value_enum)]
        generator: Generator,
        #[arg(long)]
        n: usize,
        /// Input dimension of the single-index generator.
        #[arg(long, default_value_t = 50)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit timings over several synthetic training sizes.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "25000,50000,100000")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5000)]
        leaf_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// RFM iterations per leaf (early stopping is disabled).
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses arguments and runs the command.
pub fn main_with_args(args: Vec<OsString>) -> CliResult<()> {
    let cli = Cli::parse_from_args(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli.command)
}
