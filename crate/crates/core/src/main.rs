use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vc_kinetic::cli::{run, Command, Invocation};

/// Stationary states, relaxation and estimate checks for the
/// voltage-conductance kinetic equation.
#[derive(Parser)]
#[command(name = "vckinetic", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Solve for the stationary density and run the estimate battery.
    Steady(RunArgs),
    /// Evolve from the configured initial condition.
    Evolve(RunArgs),
    /// Run the full property battery.
    Verify(RunArgs),
    /// Repeat the steady solve across a parameter sweep.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the environment and the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Sub::Steady(a) => (Command::Steady, a),
        Sub::Evolve(a) => (Command::Evolve, a),
        Sub::Verify(a) => (Command::Verify, a),
        Sub::Sweep(a) => (Command::Sweep, a),
    };
    let status = run(&Invocation {
        command,
        config: args.config,
        out: args.out,
        seed: args.seed,
    });
    ExitCode::from(status.code())
}
