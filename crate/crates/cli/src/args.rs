use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use permatch::{BoundKind, InferenceMode};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "permatch",
    version,
    about = "Learn and evaluate max-weight matching predictors with permanent-based inference"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PERMATCH_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Fit a model to LETOR or matchpairs data.
    Train(TrainArgs),
    /// Rank documents or predict matchings with a trained model.
    Predict(PredictArgs),
    /// NDCG@1..10 per query (ranking) or Hamming loss per pair (matching).
    Evaluate(EvaluateArgs),
    /// Draw exact samples of perfect matchings for a weight matrix.
    Sample(SampleArgs),
    /// Log-permanent (and optionally match marginals) of a weight matrix.
    Permanent(PermanentArgs),
    /// Five-fold cross-validation of lambda on LETOR data.
    Cv(CvArgs),
    /// Synthetic matching sweep of test loss against training-set size.
    Bench(BenchArgs),
    /// Write a synthetic matchpairs file.
    GenPairs(GenPairsArgs),
    /// Write a synthetic LETOR file rated by a planted linear scorer.
    GenLetor(GenLetorArgs),
    /// Rerun the command recorded in a manifest after checking input digests.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Sample(_) => "sample",
            Command::Permanent(_) => "permanent",
            Command::Cv(_) => "cv",
            Command::Bench(_) => "bench",
            Command::GenPairs(_) => "gen-pairs",
            Command::GenLetor(_) => "gen-letor",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Letor,
    Matchpairs,
    Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceArg {
    Auto,
    Enumerate,
    Minors,
    Sample,
}

impl From<InferenceArg> for InferenceMode {
    fn from(v: InferenceArg) -> Self {
        match v {
            InferenceArg::Auto => InferenceMode::Auto,
            InferenceArg::Enumerate => InferenceMode::Enumerate,
            InferenceArg::Minors => InferenceMode::Minors,
            InferenceArg::Sample => InferenceMode::Sample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundArg {
    RowSum,
    HuberLaw,
}

impl From<BoundArg> for BoundKind {
    fn from(v: BoundArg) -> Self {
        match v {
            BoundArg::RowSum => BoundKind::RowSumProduct,
            BoundArg::HuberLaw => BoundKind::HuberLaw,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermanentMethod {
    Ryser,
    BruteForce,
}

/// Optimizer and inference flags shared by training commands.
#[derive(Debug, Args, Serialize)]
pub struct OptimArgs {
    #[arg(long, value_enum, default_value = "auto")]
    pub inference: InferenceArg,
    /// Samples per example per gradient evaluation in sample mode.
    #[arg(long, default_value_t = 100)]
    pub k_samples: usize,
    #[arg(long, value_enum, default_value = "huber-law")]
    pub bound: BoundArg,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    /// Stop once the gradient's max-norm falls to this value.
    #[arg(long, default_value_t = 1e-5)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 60)]
    pub max_backtracks: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Bootstrap subset size M (required for LETOR).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Bootstrap subsets per query, as a fraction of D·M.
    #[arg(long, default_value_t = 0.4)]
    pub fraction: f64,
    /// Rating levels R (inferred from the data if omitted).
    #[arg(long)]
    pub levels: Option<u32>,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// CSV of `iter,loss,grad_norm,step_size`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum)]
    pub format: Format,
    #[arg(long)]
    pub data: PathBuf,
    /// `<qid> <fold>` lines; round-robin folds otherwise.
    #[arg(long)]
    pub folds: Option<PathBuf>,
    /// Evaluate only the queries of this fold.
    #[arg(long)]
    pub fold: Option<u8>,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SampleArgs {
    /// First line `m`, then `m` rows of `m` weights.
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "huber-law")]
    pub bound: BoundArg,
    /// Read entries as log-weights instead of weights.
    #[arg(long)]
    pub log_domain: bool,
    /// Attempt budget per accepted sample.
    #[arg(long, default_value_t = permatch::sampler::DEFAULT_ATTEMPTS_PER_SAMPLE)]
    pub max_attempts: u64,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PermanentArgs {
    #[arg(long)]
    pub matrix: PathBuf,
    #[arg(long)]
    pub log_domain: bool,
    #[arg(long, value_enum, default_value = "ryser")]
    pub method: PermanentMethod,
    /// Also print the matrix of match marginals p(y(i) = j).
    #[arg(long)]
    pub marginals: bool,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub folds: Option<PathBuf>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1,10")]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.4)]
    pub fraction: f64,
    #[arg(long)]
    pub levels: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    /// Training-set sizes, strictly ascending.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[arg(long, default_value_t = 0.7)]
    pub sigma: f64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 500)]
    pub test_pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub validation_pairs: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    pub lambda_grid: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "auto")]
    pub inference: InferenceArg,
    #[arg(long, default_value_t = 100)]
    pub k_samples: usize,
    #[arg(long, value_enum, default_value = "huber-law")]
    pub bound: BoundArg,
    #[arg(long, default_value_t = 15)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 8)]
    pub max_backtracks: usize,
    #[arg(long, default_value = "-")]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenPairsArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub m: usize,
    #[arg(long, default_value_t = 5)]
    pub p: usize,
    #[arg(long, default_value_t = 0.7)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GenLetorArgs {
    #[arg(long, default_value_t = 50)]
    pub queries: usize,
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub levels: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
