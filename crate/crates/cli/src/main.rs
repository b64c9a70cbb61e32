//! Command-line front end: parse a run configuration, dispatch to one of
//! the five commands, and map failures to the exit-code contract
//! (0 success, 1 run-level failure or negative verdict, 2 configuration or
//! usage errors).

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::{CliError, Outcome};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "neumann-mc",
    about = "Unbiased Monte Carlo solver for second-kind integral equations",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the flat key = value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write primary output here instead of the configured output_path
    /// (or standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check problem conditions and print the norm report.
    Validate(CommonArgs),
    /// Print the inner-replication table as CSV.
    Allocate(CommonArgs),
    /// Estimate the solution at the configured evaluation points (CSV).
    Solve(CommonArgs),
    /// Solve and compare against the deterministic oracle (CSV).
    Compare(CommonArgs),
    /// Standard error and cost across outer replication counts (CSV).
    Bench(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated outer replication counts, e.g. 100,1000,10000.
    #[arg(long = "z-list", value_delimiter = ',', required = true)]
    z_list: Vec<u64>,
}

fn load_config(args: &CommonArgs) -> Result<config::RunConfig, CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        CliError::Usage(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut cfg = config::parse_config(&text)
        .map_err(|e| CliError::Usage(format!("config error: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_output(args: &CommonArgs, cfg: &config::RunConfig, outcome: &Outcome) -> Result<(), CliError> {
    let target = args
        .out
        .clone()
        .or_else(|| cfg.output_path.as_ref().map(PathBuf::from));
    match target {
        Some(path) => std::fs::write(&path, &outcome.output)
            .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{}", outcome.output);
            Ok(())
        }
    }
}

fn run() -> Result<i32, CliError> {
    let cli = Cli::parse();
    let (args, run_cmd): (
        &CommonArgs,
        Box<dyn FnOnce(&config::RunConfig) -> Result<Outcome, CliError>>,
    ) = match &cli.command {
        Command::Validate(a) => (a, Box::new(commands::cmd_validate)),
        Command::Allocate(a) => (a, Box::new(commands::cmd_allocate)),
        Command::Solve(a) => (a, Box::new(commands::cmd_solve)),
        Command::Compare(a) => (a, Box::new(commands::cmd_compare)),
        Command::Bench(b) => {
            let z_list = b.z_list.clone();
            (
                &b.common,
                Box::new(move |cfg: &config::RunConfig| commands::cmd_bench(cfg, &z_list)),
            )
        }
    };
    let cfg = load_config(args)?;
    let outcome = run_cmd(&cfg)?;
    write_output(args, &cfg, &outcome)?;
    for note in &outcome.notes {
        eprintln!("{note}");
    }
    Ok(outcome.exit)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
