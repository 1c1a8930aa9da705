use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dnls_cli::{apply_thread_limit, run, Command, RunArgs};

/// Ground states, threshold curves, evolution and virial runs for the cubic-quintic dipolar NLS.
#[derive(Parser)]
#[command(name = "dnls", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Minimize the Weinstein quotient and save the ground state.
    GroundState(Common),
    /// Build the threshold curve from the alpha = 1 ground state.
    ThresholdCurve(Common),
    /// Evolve an initial field and record the functionals.
    Evolve(Common),
    /// Evolve and record the virial functionals.
    Virial(Common),
    /// Run the acceptance criteria.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, which must be absent or empty.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    seed: Option<u64>,
    /// Set a config field by dotted path, e.g. `evolution.dt=0.01`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::GroundState(c) => (Command::GroundState, c),
        Sub::ThresholdCurve(c) => (Command::ThresholdCurve, c),
        Sub::Evolve(c) => (Command::Evolve, c),
        Sub::Virial(c) => (Command::Virial, c),
        Sub::Verify(c) => (Command::Verify, c),
    };
    let threads = std::env::var("DNLS_THREADS").ok();
    if let Err(e) = apply_thread_limit(threads.as_deref()) {
        eprintln!("dnls: {e}");
        return ExitCode::from(e.exit_code());
    }
    let args = RunArgs {
        command,
        config: common.config,
        out: common.out,
        seed: common.seed,
        overrides: common.overrides,
    };
    match run(&args) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("dnls {command}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
