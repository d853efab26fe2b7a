use std::path::PathBuf;

use clap::{Parser, Subcommand};
use levyfbsde_cli::{execute, Command, Options};

#[derive(Parser)]
#[command(name = "levyfbsde", version, about = "Stable-like FBSDE experiments and the acceptance suite")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the number of Monte Carlo paths.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true, env = "LEVYFBSDE_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Check the measure assumptions.
    CheckMeasure,
    /// Simulate forward paths and their moments.
    SimulateForward,
    /// Solve for the value function.
    SolvePde,
    /// Estimate the gradient by weights, finite differences and the variational equation.
    EstimateGradient,
    /// Weight and gradient scaling in the elapsed time.
    Scaling,
    /// Run every acceptance criterion.
    Verify,
    /// Print the results of a previous `verify`.
    Report,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot set up {n} threads: {e}");
            std::process::exit(2);
        }
    }
    let command = match cli.command {
        Sub::CheckMeasure => Command::CheckMeasure,
        Sub::SimulateForward => Command::SimulateForward,
        Sub::SolvePde => Command::SolvePde,
        Sub::EstimateGradient => Command::EstimateGradient,
        Sub::Scaling => Command::Scaling,
        Sub::Verify => Command::Verify,
        Sub::Report => Command::Report,
    };
    let opts = Options { config: cli.config, seed: cli.seed, out: cli.out, paths: cli.paths, threads: cli.threads };
    std::process::exit(execute(command, &opts));
}
