use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "jumpepr", version, about = "Entropy production and reversibility of jump-diffusion processes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct Common {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Args, Serialize, Clone, Default)]
pub struct GridArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub grid_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_max: Option<f64>,
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Simulate an ensemble of sample paths.
    Simulate {
        /// Spec JSON file, or `builtin:<name>`.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        /// Initial point, comma-separated; defaults to the origin.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        x0: Vec<f64>,
        /// Draw initial states from this density CSV instead.
        #[arg(long)]
        density: Option<PathBuf>,
    },
    /// Evolve a density under the Fokker-Planck equation.
    SolveFpe {
        #[arg(long)]
        spec: String,
        #[command(flatten)]
        grid: GridArgs,
        /// Defaults to the stability bound.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        #[arg(long, default_value_t = 0.1)]
        interval: f64,
        /// Initial density CSV; otherwise a Gaussian.
        #[arg(long)]
        density: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        init_mean: f64,
        #[arg(long, default_value_t = 1.0)]
        init_std: f64,
    },
    /// Entropy production rate of a density.
    Epr {
        #[arg(long)]
        spec: String,
        #[arg(long)]
        density: PathBuf,
        /// Diagonal band half-width in cells.
        #[arg(long, default_value_t = 1)]
        band_cells: usize,
    },
    /// Run all reversibility checks at a stationary density.
    CheckReversibility {
        #[arg(long)]
        spec: String,
        /// Stationary density CSV; otherwise obtained by relaxing a Gaussian.
        #[arg(long)]
        density: Option<PathBuf>,
        #[command(flatten)]
        grid: GridArgs,
        /// Relaxation time when no density is given.
        #[arg(long, default_value_t = 20.0)]
        t_final: f64,
        #[arg(long, default_value_t = 1)]
        band_cells: usize,
    },
    /// Path-ensemble estimate of the entropy production rate.
    ReversalKl {
        #[arg(long)]
        spec: String,
        /// Stationary density CSV.
        #[arg(long)]
        density: PathBuf,
        #[arg(long, default_value_t = 1000)]
        paths: usize,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0.0)]
        delta_small: f64,
    },
    /// Relaxation of the Ornstein-Uhlenbeck process with relocation jumps.
    Example1 {
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
    },
    /// Stable-driven Ornstein-Uhlenbeck steady states.
    Example2 {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 1.5])]
        alpha: Vec<f64>,
        #[command(flatten)]
        grid: GridArgs,
        /// Girsanov paths per alpha (0 skips the cross-check).
        #[arg(long, default_value_t = 10_000)]
        paths: usize,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::SolveFpe { .. } => "solve-fpe",
            Command::Epr { .. } => "epr",
            Command::CheckReversibility { .. } => "check-reversibility",
            Command::ReversalKl { .. } => "reversal-kl",
            Command::Example1 { .. } => "example1",
            Command::Example2 { .. } => "example2",
        }
    }
}
