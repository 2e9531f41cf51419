//! `cps`: solve, simulate and inspect paired model/actual systems.
//!
//! Every output file starts with a header line carrying the config hash and
//! the seed (the JSON artifact carries them as fields). Floats are written
//! with 12 significant digits, so identical invocations produce identical
//! bytes.

mod commands;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cps", version, about = "Separated learning and control for paired model/actual systems")]
struct Cli {
    /// Directory receiving the output files.
    #[arg(long, global = true, env = "CPS_OUT_DIR", default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the dynamic program; writes solution.json and value_table.csv.
    Solve {
        #[command(flatten)]
        system: SystemArgs,
        /// Recorded in the outputs; solving is deterministic.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run episodes under the solved strategy; writes episodes.csv and
    /// summary.csv, plus learning_curve.csv and estimate.csv in learned mode.
    Simulate {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        episodes: usize,
        /// Kernel the filter uses for the actual system.
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        /// Independent learning runs averaged in learning_curve.csv.
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Learning-curve resolution in episodes.
        #[arg(long, default_value_t = 100)]
        record_every: usize,
        /// Smoothing pseudo-count of the kernel estimate.
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
    },
    /// Trace one episode with its beliefs; writes filter_trace.csv.
    FilterTrace {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Gaussian two-subsystem example; writes example_report.txt,
    /// example_gains.csv and example_walkthrough.csv.
    Example {
        /// Optional TOML file with rho, samples, grid_lo, grid_hi, grid_step, bins.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Correlation of the two initial components, in [-1, 1].
        #[arg(long, allow_hyphen_values = true)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo sample count.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Compare the dynamic program with exhaustive strategy search;
    /// writes oracle_check.csv.
    OracleCheck {
        /// System to check in addition to the random instances.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        beta: Option<f64>,
        #[arg(long, value_enum)]
        coupling: Option<CouplingArg>,
        /// Number of random tiny instances.
        #[arg(long, default_value_t = 10)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Args)]
struct SystemArgs {
    /// System description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the mismatch weight β ≥ 0.
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Override how model and actual transitions share randomness.
    #[arg(long, value_enum)]
    coupling: Option<CouplingArg>,
    /// Value function representation; grid when only --grid-m is given.
    #[arg(long, value_enum)]
    representation: Option<Representation>,
    /// Mesh resolution of the grid representation.
    #[arg(long = "grid-m")]
    grid_m: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Learned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CouplingArg {
    Shared,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Representation {
    Alpha,
    Grid,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let out = cli.out;
    match cli.command {
        Command::Solve { system, seed } => commands::solve_command(&out, &system, seed),
        Command::Simulate {
            system,
            seed,
            episodes,
            mode,
            runs,
            record_every,
            smoothing,
        } => commands::simulate(
            &out,
            &system,
            &commands::SimulateOptions {
                seed,
                episodes,
                mode,
                runs,
                record_every,
                smoothing,
            },
        ),
        Command::FilterTrace { system, seed } => commands::filter_trace(&out, &system, seed),
        Command::Example {
            config,
            rho,
            seed,
            samples,
        } => commands::example(&out, config.as_deref(), rho, seed, samples),
        Command::OracleCheck {
            config,
            beta,
            coupling,
            instances,
            seed,
        } => commands::oracle_check(&out, config.as_deref(), beta, coupling, instances, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
