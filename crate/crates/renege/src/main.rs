use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use renege::commands::{cmd_simulate, cmd_solve, cmd_sweep, cmd_verify, Overrides};
use renege::config::RunConfig;

#[derive(Parser)]
#[command(name = "renege", version, about = "Equilibrium abandonment in the observable M/G/1 queue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the equilibrium profile.
    Solve(Common),
    /// Simulate a given profile.
    Simulate(Common),
    /// Solve, simulate and compare.
    Verify(Common),
    /// Solve across a range of one parameter.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Also write utility curves and posterior densities.
    #[arg(long)]
    curves: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulation horizon in events.
    #[arg(long)]
    horizon: Option<u64>,
    /// Root tolerance of the solver.
    #[arg(long)]
    tol: Option<f64>,
}

type Handler = fn(&RunConfig, &Overrides) -> Result<(), renege::CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (run, common): (Handler, Common) = match cli.command {
        Command::Solve(c) => (cmd_solve, c),
        Command::Simulate(c) => (cmd_simulate, c),
        Command::Verify(c) => (cmd_verify, c),
        Command::Sweep(c) => (cmd_sweep, c),
    };
    let overrides = Overrides { out: common.out, curves: common.curves, seed: common.seed, horizon: common.horizon, tol: common.tol };
    let result = RunConfig::load(&common.config).and_then(|mut cfg| {
        overrides.apply(&mut cfg)?;
        run(&cfg, &overrides)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
