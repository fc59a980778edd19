mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

/// Small-signal stability assessment for structure-preserving swing models.
#[derive(Debug, Parser)]
#[command(name = "swingcert", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Case file, or `builtin:wscc9` / `builtin:two_bus`.
    #[arg(long, global = true, default_value = "builtin:wscc9")]
    pub case: String,
    /// Add an internal EMF bus behind each generator's transient reactance.
    #[arg(long, global = true, requires = "xdprime")]
    pub augment_internal: bool,
    /// Transient reactances x'_d, one per generator in case order.
    #[arg(long, global = true, value_delimiter = ',')]
    pub xdprime: Vec<f64>,
    /// Load inertia(s) of the perturbed model; comma separated where a command accepts several.
    #[arg(long, global = true, value_delimiter = ',')]
    pub eps: Vec<f64>,
    /// Write output files into this directory instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Seed for randomized diagnostics.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the per-generator certificate at the solved equilibrium.
    Assess,
    /// Check the line-angle hypothesis at the solved equilibrium.
    CheckAssumption(commands::CheckAssumptionArgs),
    /// Spectra of both linearizations and their matching diagnostics.
    Modal(commands::ModalArgs),
    /// Sweep a parameter multiplier and tabulate average index and eigenvalue real part.
    Sweep(commands::SweepArgs),
    /// Simulate one or both models after a disturbance.
    Simulate(commands::SimulateArgs),
    /// Run per-generator monitors on a measurement stream.
    Monitor(commands::MonitorArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match &cli.command {
        Command::Assess => commands::assess(&cli.global),
        Command::CheckAssumption(args) => commands::check_assumption(&cli.global, args),
        Command::Modal(args) => commands::modal(&cli.global, args),
        Command::Sweep(args) => commands::sweep(&cli.global, args),
        Command::Simulate(args) => commands::simulate(&cli.global, args),
        Command::Monitor(args) => commands::monitor(&cli.global, args),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code as u8)
        }
    }
}
