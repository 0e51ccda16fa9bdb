use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "vbpp", version, about = "Variational Gaussian-process Poisson process toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a ground-truth intensity and sample events from it.
    Simulate(SimulateArgs),
    /// Fit a model to events.
    Fit(FitArgs),
    /// Posterior intensity of a fitted model at query points.
    Predict(PredictArgs),
    /// Held-out predictive bounds and Monte-Carlo estimates.
    Evaluate(EvaluateArgs),
    /// Kernel-smoothing baseline.
    Baseline(BaselineArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LinkArg {
    Square,
    Sigmoid,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Domain as lo:hi[,lo:hi...]
    #[arg(long)]
    pub domain: String,
    /// Output variance γ of the ground-truth GP.
    #[arg(long)]
    pub gamma: f64,
    /// Lengthscale parameter α per dimension (one value applies to all).
    #[arg(long, value_delimiter = ',', required = true)]
    pub alpha: Vec<f64>,
    #[arg(long, value_enum, default_value = "square")]
    pub link: LinkArg,
    /// Maximum rate λ* of the sigmoid link.
    #[arg(long, required_if_eq("link", "sigmoid"))]
    pub lambda_star: Option<f64>,
    /// Grid cells per dimension (default 2048 in 1D, 128 per dimension in 2D).
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Events CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth grid CSV (coordinates, f, λ).
    #[arg(long)]
    pub truth_out: PathBuf,
    /// Optional second, independent event set from the same intensity.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Keep each event in the training half with this probability.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain: String,
    /// Number of inducing points on a regular grid (a perfect R-th power).
    #[arg(long, conflicts_with = "inducing_per_dim")]
    pub inducing: Option<usize>,
    /// Inducing points per dimension.
    #[arg(long, value_delimiter = ',')]
    pub inducing_per_dim: Option<Vec<usize>>,
    /// Also optimise the inducing-point locations.
    #[arg(long)]
    pub optimize_z: bool,
    #[arg(long, default_value_t = 1000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub grad_tol: f64,
    /// MAP estimate with the default prior over the hyperparameters.
    #[arg(long)]
    pub map: bool,
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "model.json")]
    pub out: PathBuf,
    /// Trace CSV (iteration, objective, grad_norm); defaults to <out>.trace.csv.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Query points CSV; a regular grid is used when absent.
    #[arg(long)]
    pub query: Option<PathBuf>,
    /// Grid cells per dimension for the default query grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
    #[arg(long, default_value = "intensity.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Held-out events.
    #[arg(long, conflicts_with = "data")]
    pub test: Option<PathBuf>,
    /// Full event file to split (with --split); the second half is evaluated.
    #[arg(long, requires = "split")]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Checked against the model's domain when given.
    #[arg(long)]
    pub domain: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Quadrature cells per dimension for the Monte-Carlo estimates.
    #[arg(long, value_delimiter = ',')]
    pub mc_grid: Option<Vec<usize>>,
    /// Seed of the Monte-Carlo draws.
    #[arg(long, default_value_t = 0)]
    pub mc_seed: u64,
    /// Add the kernel-smoothing comparison (needs training events).
    #[arg(long)]
    pub baseline: bool,
    /// Training events (defaults to the first half of the split).
    #[arg(long)]
    pub train: Option<PathBuf>,
    /// Ground-truth grid CSV; adds intensity RMSE to the report.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
    /// Posterior intensity over a grid; defaults to <out>.intensity.csv.
    #[arg(long)]
    pub intensity_out: Option<PathBuf>,
    /// Grid cells per dimension for the intensity CSV.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub domain: String,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Use plain (untruncated) normal kernels.
    #[arg(long)]
    pub no_end_correction: bool,
    #[arg(long, default_value = "ks.json")]
    pub out: PathBuf,
    /// Intensity over a grid; defaults to <out>.intensity.csv.
    #[arg(long)]
    pub intensity_out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<usize>>,
}
