//! `seaq`: run scenarios of the steepest-entropy-ascent quantum dynamics.

mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Scenario;
use run::{Command, Runner};

#[derive(Parser)]
#[command(
    name = "seaq",
    version,
    about = "Dissipative density-matrix dynamics scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Scenario file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; created when missing. Defaults to the current directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides every seed in the scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Full nonlinear trajectory.
    Evolve,
    /// Canonical state at the configured energy or temperature.
    Equilibrium,
    /// Rate matrix and linear trajectory near equilibrium.
    Linearize,
    /// Nonlinear and linear deviations side by side, with fitted rates.
    Compare,
    /// Two factors in thermal contact, adiabatic, or isolated coupling.
    Contact,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Evolve => Command::Evolve,
            Cmd::Equilibrium => Command::Equilibrium,
            Cmd::Linearize => Command::Linearize,
            Cmd::Compare => Command::Compare,
            Cmd::Contact => Command::Contact,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config <path> is required");
        return ExitCode::from(2);
    };
    let result = config::load(path).and_then(|cfg| {
        let runner = Runner {
            scenario: Scenario::new(cfg, cli.seed),
            out: run::output_dir(cli.out.as_deref()),
            quiet: cli.quiet,
        };
        runner.run(cli.command.into())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
