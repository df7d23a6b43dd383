//! `daof` command-line entry point: train filter policies, benchmark them
//! against classical baselines, run the window-length ablation, and generate
//! trajectory datasets.

mod assemble;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{cmd_ablate, cmd_bench, cmd_eval, cmd_gen, cmd_train, AppError};

#[derive(Parser)]
#[command(
    name = "daof",
    about = "State-estimation lab: learned history-window filters vs classical baselines",
    version
)]
struct Cli {
    /// Configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.gamma=0.99 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap the evaluation worker pool; training is always single-threaded.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured target (daof v1/v2 policy or the supervised filter).
    Train,
    /// Run the configured Monte Carlo benchmark and write the report.
    Bench,
    /// Train and evaluate one v1 policy per sliding-window length.
    Ablate,
    /// Generate trajectory CSV datasets.
    Gen,
    /// Evaluate a single checkpoint under the benchmark protocol.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), AppError> {
    if let Some(threads) = cli.threads {
        // Ignore the error if a pool already exists (e.g. repeated calls in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cfg = config::load_config(
        cli.config.as_deref(),
        &cli.set,
        cli.seed,
        cli.out.as_deref(),
    )?;
    match &cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Bench => cmd_bench(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::Gen => cmd_gen(&cfg),
        Command::Eval { checkpoint } => cmd_eval(&cfg, checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
