mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use preavg::Error;

#[derive(Parser, Debug)]
#[command(name = "preavg", version, about = "Pre-averaged volatility estimation under microstructure noise")]
struct Cli {
    /// Master seed (overrides a config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Output file, or output directory for `study`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Weight constants ψ₁ⁿ … ψ₄ⁿ and their limits ψ₁ … ψ₇.
    Psi(PsiArgs),
    /// Simulate a latent path and noisy observations.
    Simulate(SimulateArgs),
    /// Estimate integrated volatility from a `t,y` CSV.
    Estimate(EstimateArgs),
    /// Export the coefficients of the corrected law for one grid.
    Expand(ExpandArgs),
    /// Run a Monte Carlo study from a TOML manifest.
    Study(StudyArgs),
}

#[derive(Args, Debug)]
pub struct PsiArgs {
    /// `tent`, or a file of `x,g(x)` knots (piecewise linear, `#` comments).
    #[arg(long, default_value = "tent")]
    pub weight: String,
    /// Window lengths for the finite-`k_n` constants.
    #[arg(long = "kn", value_delimiter = ',', num_args = 1..)]
    pub kn: Vec<usize>,
    /// Print the limit constants.
    #[arg(long)]
    pub limits: bool,
    /// Also print exact rationals (tent only).
    #[arg(long)]
    pub exact: bool,
    #[arg(long, default_value_t = preavg::weights::DEFAULT_QUAD_PANELS)]
    pub panels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Gbm,
    ConstantVol,
}

#[derive(Args, Debug, Clone)]
pub struct ModelParams {
    /// gbm drift.
    #[arg(long, default_value_t = 0.05)]
    pub a: f64,
    /// gbm volatility.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    /// Constant volatility level.
    #[arg(long, default_value_t = 0.2)]
    pub b: f64,
    /// Constant-volatility drift.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f64,
    #[arg(long)]
    pub x0: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Noise level as a share of the mean squared volatility (used without `--omega`).
    #[arg(long)]
    pub noise_ratio: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "gbm")]
    pub model: ModelArg,
    #[command(flatten)]
    pub params: ModelParams,
    #[arg(long)]
    pub n: usize,
    /// Window length that fixes θ for `--noise-ratio`; defaults to θ = 1.
    #[arg(long = "kn")]
    pub kn: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub oversampling: usize,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// CSV with columns `t` and `y`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long = "kn")]
    pub kn: usize,
    /// Reject grids with `k_n · d_n ≠ n`.
    #[arg(long)]
    pub strict: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Tail block size.
    #[arg(long = "pn")]
    pub pn: Option<usize>,
    /// Known integrated volatility, for the studentized statistic.
    #[arg(long)]
    pub true_v: Option<f64>,
    /// Model for corrected quantiles; without it the interval is normal.
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[command(flatten)]
    pub params: ModelParams,
    /// Monte Carlo paths for gbm coefficients.
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
}

#[derive(Args, Debug)]
pub struct ExpandArgs {
    #[arg(long, value_enum, default_value = "gbm")]
    pub model: ModelArg,
    #[command(flatten)]
    pub params: ModelParams,
    #[arg(long)]
    pub n: usize,
    #[arg(long = "kn")]
    pub kn: usize,
    #[arg(long, default_value_t = 10_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 1)]
    pub oversampling: usize,
}

#[derive(Args, Debug)]
pub struct StudyArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `replications` in the manifest.
    #[arg(long)]
    pub replications: Option<usize>,
}

pub struct Globals {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::StudyInvalid { .. } => 3,
        Error::Numeric(_)
        | Error::DegenerateVariance(_)
        | Error::InvalidExpansion { .. }
        | Error::SimulationDiverged { .. }
        | Error::TaintedReplication { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let globals = Globals {
        seed: cli.seed,
        workers: cli.workers,
        format: cli.format,
        out: cli.out,
    };
    let result = match cli.command {
        Command::Psi(a) => commands::psi(&a, &globals),
        Command::Simulate(a) => commands::simulate(&a, &globals),
        Command::Estimate(a) => commands::estimate(&a, &globals),
        Command::Expand(a) => commands::expand(&a, &globals),
        Command::Study(a) => commands::study(&a, &globals),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
