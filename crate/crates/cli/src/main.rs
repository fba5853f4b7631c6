//! `routhsim`: run hybrid forced Lagrangian scenarios from JSON files,
//! reduce them by a conserved momentum, cross-check integration paths
//! against each other, and render the resulting tables to SVG.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod manifest;
mod plot;

// Exit codes. Clean runs that reach the horizon (or the configured impact
// cap) exit 0. Anything wrong with the inputs themselves is 1. A run cut
// short by a suspected Zeno accumulation is 2, a numerical failure mid-run
// is 3. `compare` adds 4 (trajectories disagree structurally) and 5
// (deviation above tolerance).
pub const EXIT_OK: u8 = 0;
pub const EXIT_BAD_INPUT: u8 = 1;
pub const EXIT_ZENO: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_STRUCTURAL: u8 = 4;
pub const EXIT_TOLERANCE: u8 = 5;

#[derive(Parser)]
#[command(
    name = "routhsim",
    version,
    about = "Hybrid forced Lagrangian systems: simulate, reduce, compare, plot"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full hybrid system and write trajectory and impact tables
    Simulate(RunArgs),
    /// Integrate the momentum-reduced system and reconstruct the full motion
    Reduce(RunArgs),
    /// Run two integration paths on one scenario and report their deviation
    Compare(CompareArgs),
    /// Render trajectory or reduced CSV tables to SVG
    Plot(PlotArgs),
    /// List built-in scenario kinds
    ListScenarios,
}

#[derive(Args)]
pub struct RunArgs {
    /// Scenario description (JSON)
    pub scenario: PathBuf,

    /// Override the integration step
    #[arg(long)]
    pub dt: Option<f64>,

    /// Override the time horizon
    #[arg(long)]
    pub tmax: Option<f64>,

    /// Directory for output files (default: the scenario's `outputs.dir`,
    /// then the working directory)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Second integration path to validate against the full Lagrangian run
    #[arg(long, value_enum)]
    pub side: CompareSide,

    /// Largest acceptable deviation (positions, velocities, impact times)
    #[arg(long, default_value_t = 1e-3)]
    pub tol: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum CompareSide {
    /// Piecewise-momentum reduced run, reconstructed to the full chart
    Reduced,
    /// Hamiltonian-side run, mapped back through the Legendre transform
    Hamiltonian,
}

#[derive(Args)]
pub struct PlotArgs {
    /// CSV tables produced by `simulate` or `reduce`
    #[arg(required = true)]
    pub csv: Vec<PathBuf>,

    /// Directory for the rendered SVGs (default: next to each input)
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// How to read the first two position columns in plane views
    #[arg(long, value_enum, default_value_t = ChartKind::Polar)]
    pub chart: ChartKind,

    /// Switching surface drawn on the plots: circle radius in plane views,
    /// horizontal level in time series
    #[arg(long, default_value_t = 1.0)]
    pub guard_level: f64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum ChartKind {
    /// Positions are radius and angle
    Polar,
    /// Positions are plane coordinates
    Cartesian,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // --help and --version land here; they are not failures. Real
            // usage errors share the bad-input code so 2 stays reserved for
            // Zeno terminations.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_BAD_INPUT,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let code = match cli.command {
        Command::Simulate(args) => commands::simulate(&args),
        Command::Reduce(args) => commands::reduce(&args),
        Command::Compare(args) => commands::compare(&args),
        Command::Plot(args) => commands::plot(&args),
        Command::ListScenarios => commands::list_scenarios(),
    };
    ExitCode::from(code)
}
