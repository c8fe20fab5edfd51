mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{benchmark, evaluate, fit, harmonize, predict, simulate};
use error::{exit_code, CliError};

/// Poly-RBF diffusion MRI modeling, prediction and harmonization.
#[derive(Debug, Parser)]
#[command(name = "polyrbf", version)]
struct Cli {
    /// Seed for every random stream (subsampling, noise, folds).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-voxel coefficients and write a fit artifact.
    Fit(fit::FitArgs),
    /// Predict signals on a new gradient table from a fit artifact.
    Predict(predict::PredictArgs),
    /// Predict onto a common design, extract features and adjust batches.
    Harmonize(harmonize::HarmonizeArgs),
    /// Generate a multi-tensor phantom.
    Simulate(simulate::SimulateArgs),
    /// Score a predicted volume against a reference.
    Evaluate(evaluate::EvaluateArgs),
    /// Held-out prediction benchmark over subsampling protocols.
    Benchmark(benchmark::BenchmarkArgs),
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    match &cli.command {
        Command::Fit(a) => fit::run(a, cli.seed),
        Command::Predict(a) => predict::run(a),
        Command::Harmonize(a) => harmonize::run(a, cli.seed),
        Command::Simulate(a) => simulate::run(a, cli.seed),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Benchmark(a) => benchmark::run(a, cli.seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
