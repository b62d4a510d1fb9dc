//! `gauss-markov`: config-driven experiments on Gaussian Markov families.
//!
//! Exit codes: 0 when every check passes, 1 when a scientific check fails,
//! 2 on usage, input or IO errors.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "gauss-markov", version, about = "Gaussian Markov families: kernels, identification, simulation and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate m(t, x) and Q(t) and check Chapman–Kolmogorov composition
    Kernel(Common),
    /// Recover (A, b, Q) from a kernel-samples file
    Identify(Common),
    /// Sample paths and compare their moments with the exact kernel
    Simulate(Common),
    /// Martingale diagnostics of the projected noise part
    Martingale(Common),
    /// Check (P_Δφ − φ)/Δ → Lφ on cylindrical test functions
    Generator(Common),
    /// Half-line heat equation with white-noise boundary data
    Boundary(Common),
}

/// Flags shared by every subcommand; they override values from `--config`.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file; missing keys take their defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed
    #[arg(long, value_name = "INT")]
    pub seed: Option<u64>,
    /// Output directory; must not exist yet
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Main tolerance of the command's check
    #[arg(long, value_name = "FLOAT")]
    pub tol: Option<f64>,
}

pub const EXIT_PASS: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // clap exits 0 for --help/--version and 2 for usage errors
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Kernel(c) => commands::kernel::run(c),
        Command::Identify(c) => commands::identify::run(c),
        Command::Simulate(c) => commands::simulate::run(c),
        Command::Martingale(c) => commands::martingale::run(c),
        Command::Generator(c) => commands::generator::run(c),
        Command::Boundary(c) => commands::boundary::run(c),
    };
    match result {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.pass {
                ExitCode::from(EXIT_PASS)
            } else {
                eprintln!("check failed: {}", outcome.summary);
                ExitCode::from(EXIT_CHECK_FAILED)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
