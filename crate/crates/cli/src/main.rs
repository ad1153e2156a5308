use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use crossdiff_cli::{execute, Command, RunFlags, EXIT_VALIDATION};

#[derive(Parser)]
#[command(name = "crossdiff", version, about = "Stochastic cross-diffusion population simulator")]
struct Cli {
    #[command(subcommand)]
    command: Sub,

    /// Config file (line-oriented key = value with [section] headers).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the number of paths.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for ensembles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Check assumptions and certify the quadratic-form bounds.
    Check,
    /// Run one path and write its monitor CSV.
    Simulate,
    /// Run an ensemble and write moment estimates.
    Ensemble,
    /// Run a refinement or N-uniformity study.
    Converge,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Sub::Check => Command::Check,
        Sub::Simulate => Command::Simulate,
        Sub::Ensemble => Command::Ensemble,
        Sub::Converge => Command::Converge,
    };
    let Some(path) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(EXIT_VALIDATION as u8);
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(EXIT_VALIDATION as u8);
        }
    };
    let flags = RunFlags {
        seed: cli.seed,
        paths: cli.paths,
        out: cli.out,
        threads: cli.threads,
    };
    let code = execute(cmd, &text, &flags, &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
