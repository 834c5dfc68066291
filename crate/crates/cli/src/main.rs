//! Command-line frontend: dataset generation, pretraining, continuation-token
//! training, evaluation, and trace analysis as reproducible runs.
//!
//! Every subcommand resolves its settings as defaults, overlaid by an
//! optional TOML config file, overlaid by flags, and writes the resolved
//! snapshot next to its outputs. Identical resolved configs and seeds
//! produce byte-identical outputs at any worker count.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

mod commands;
mod config;
mod io;
mod judge;
mod pool;
#[cfg(test)]
mod testutil;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// A semantically invalid argument or config value; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Flags shared by every subcommand.
pub struct Global {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Parser)]
#[command(
    name = "bftok",
    version,
    about = "Train and evaluate a learned continue-thinking token on arithmetic tasks"
)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed for all randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per CPU).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate task datasets and the pretraining corpus.
    GenData(commands::gen_data::Args),
    /// Pretrain the base model on the rendered corpus.
    Pretrain(commands::pretrain::Args),
    /// Train the continuation token against a frozen base model.
    TrainToken(commands::train_token::Args),
    /// Evaluate a checkpoint over the method grid.
    Eval(commands::eval::Args),
    /// Derive analysis tables from a trace archive.
    Analyze(commands::analyze::Args),
    /// Print one archived trace as annotated text.
    InspectTrace(commands::inspect::Args),
}

fn main() {
    let cli = Cli::parse();
    let global = Global {
        config: cli.config,
        seed: cli.seed,
        workers: cli.workers,
    };
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(args, &global),
        Command::Pretrain(args) => commands::pretrain::run(args, &global),
        Command::TrainToken(args) => commands::train_token::run(args, &global),
        Command::Eval(args) => commands::eval::run(args, &global),
        Command::Analyze(args) => commands::analyze::run(args, &global),
        Command::InspectTrace(args) => commands::inspect::run(args, &global),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        let usage = e.chain().any(|c| c.is::<UsageError>());
        std::process::exit(if usage { 2 } else { 1 });
    }
}
