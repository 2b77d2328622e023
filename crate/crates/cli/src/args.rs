use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "rksindy", version, about = "Sparse ODE discovery from trajectory data by one-step RK4 prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate benchmark trajectories as CSV.
    Simulate(DataArgs),
    /// Discover a sparse model and write model, equations and plot data.
    Discover(RunArgs),
    /// Run discovery and the derivative-based baseline on the same data.
    Compare(RunArgs),
    /// Dense fits of increasing polynomial degree.
    AssessDegree {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 5)]
        max_degree: u32,
    },
    /// Fixed-cutoff discovery over a grid of cutoffs.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated cutoffs, e.g. `0.01,0.05,0.1`.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// linear2d, cubic2d, fhn, lorenz, mm or hopf.
    #[arg(long)]
    pub benchmark: Option<String>,
    /// Trajectory CSV files (`t,x1..,u1..,p1..`); repeat for several.
    #[arg(long)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Standard deviation of additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run configuration; explicit flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Plain,
    Rational,
    Extended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NormalizeArg {
    Auto,
    Off,
    Statistical,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Classical,
    Uniform,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub dict_degree: Option<u32>,
    #[arg(long, value_enum)]
    pub form: Option<FormArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Cutoff for fixed thresholding.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Loss tolerance for iterative thresholding: a number, or `Nx` for N
    /// times the dense-model loss.
    #[arg(long)]
    pub tol: Option<String>,
    /// Add backward predictions to the loss.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub backward: Option<bool>,
    #[arg(long)]
    pub filter_window: Option<usize>,
    #[arg(long)]
    pub filter_order: Option<usize>,
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,
    /// Shift for `--normalize custom`, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub shift: Option<Vec<f64>>,
    /// Scale for `--normalize custom`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub scale: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub rk4_weights: Option<WeightsArg>,
    #[arg(long)]
    pub l1: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}
