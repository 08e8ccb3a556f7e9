use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imsmart::error::ErrorClass;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "imsmart", version, about = "Interim monitoring for SMART designs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derive group-sequential efficacy boundaries.
    Boundaries(BoundariesArgs),
    /// Sequential power at a sample size, or the sample size for a target power.
    Power(PowerArgs),
    /// Operating characteristics of a monitored design by simulation.
    Simulate(SimulateArgs),
    /// Analyse trial data at an interim or final look.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Family {
    Pocock,
    Obf,
    /// Critical values proportional to sqrt(M - m + 1).
    ObfLookIndex,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Mc,
    Series,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    Maximize,
    Minimize,
}

/// Monitoring plan flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Number of looks; information proportions default to m / M.
    #[arg(long)]
    looks: Option<usize>,
    /// Comma-separated information proportions ending in 1.
    #[arg(long, value_delimiter = ',')]
    info_props: Option<Vec<f64>>,
    /// Overall type I error.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    family: Option<Family>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Monte Carlo replicates for boundary calibration.
    #[arg(long)]
    boundary_replicates: Option<usize>,
    /// Use these critical values instead of calibrating.
    #[arg(long, value_delimiter = ',')]
    boundaries: Option<Vec<f64>>,
    /// Read the plan from a JSON report written by `boundaries --out`.
    #[arg(long)]
    plan: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BoundariesArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Degrees of freedom of the Wald statistic.
    #[arg(long)]
    df: usize,
    /// Monte Carlo replicates.
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Study configuration with [design] and [scenario].
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    plan: PlanArgs,
    /// Maximum sample size at which to report power.
    #[arg(long)]
    n: Option<usize>,
    /// Search for the smallest n_max reaching --target-power.
    #[arg(long)]
    find_n: bool,
    #[arg(long, default_value_t = 0.9)]
    target_power: f64,
    /// Largest sample size the search may return.
    #[arg(long, default_value_t = 100_000)]
    cap: usize,
    /// Monte Carlo replicates for power.
    #[arg(long, default_value_t = 100_000)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study configuration with [design], [scenario] and optionally
    /// [monitoring] and [simulation].
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    plan: PlanArgs,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Estimate the best-selection probability, judging strategies in this
    /// direction.
    #[arg(long, value_enum)]
    best_select: Option<DirectionArg>,
    #[arg(long)]
    resamples: Option<usize>,
    /// Skip the n / (n - p) covariance inflation.
    #[arg(long)]
    no_inflate: bool,
    /// Write the first simulated trial as CSV.
    #[arg(long)]
    emit_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Patient-level CSV.
    #[arg(long)]
    data: PathBuf,
    /// Study configuration supplying the design (and optionally the plan).
    #[arg(long)]
    design: PathBuf,
    /// Last look to analyse (1-based); defaults to the final look.
    #[arg(long)]
    look: Option<usize>,
    #[command(flatten)]
    plan: PlanArgs,
    /// Planned maximum sample size; defaults to the number of records.
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, value_enum)]
    direction: Option<DirectionArg>,
    /// Run best-strategy selection after a rejection.
    #[arg(long)]
    post_hoc: bool,
    #[arg(long)]
    resamples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_inflate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Usage => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Boundaries(a) => commands::boundaries(a),
        Command::Power(a) => commands::power(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Analyze(a) => commands::analyze(a),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
