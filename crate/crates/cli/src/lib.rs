//! Command-line driver: `capsnet plan|augment|train|eval|predict`.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "capsnet", version, about = "Class-balanced capsule endoscopy classification pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON pipeline configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Upper bound on worker threads for every pool.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Sequential data loading during training.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print and save the per-class balancing plan.
    Plan(#[command(flatten)] Common),
    /// Materialize the balanced dataset and its manifest.
    Augment(#[command(flatten)] Common),
    /// Train and write checkpoints, the metric log and curves.
    Train(#[command(flatten)] Common),
    /// Evaluate a checkpoint on the validation split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Classify images, one JSON line per image.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image files or directories.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Plan(c) | Command::Augment(c) | Command::Train(c) => c,
            Command::Eval { common, .. } | Command::Predict { common, .. } => common,
        }
    }
}

fn resolve(common: &Common) -> CliResult<PipelineConfig> {
    let mut config = PipelineConfig::load(common.config.as_deref(), &common.set)?;
    if common.deterministic {
        config.train.deterministic = true;
    }
    Ok(config)
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let common = cli.command.common().clone();
    let workers = common.workers.unwrap_or_else(default_workers).max(1);
    // Ignored when a global pool already exists (repeated calls in one process).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    match &cli.command {
        Command::Plan(c) => commands::cmd_plan(&resolve(c)?).map(drop),
        Command::Augment(c) => commands::cmd_augment(&resolve(c)?, workers).map(drop),
        Command::Train(c) => commands::cmd_train(&resolve(c)?).map(drop),
        Command::Eval { common, checkpoint } => commands::cmd_eval(&resolve(common)?, checkpoint.as_deref()).map(drop),
        Command::Predict { checkpoint, inputs, .. } => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            commands::cmd_predict(checkpoint, inputs, &mut lock).map(drop)
        }
    }
}
