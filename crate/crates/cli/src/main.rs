//! `decompl`: synthetic data, training, evaluation, ablations, profiling and
//! annotation tooling.
//!
//! Exit codes: 0 success, 1 internal error, 2 configuration or usage error,
//! 3 validation, label or diff error, 4 data, I/O or checkpoint error.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decompl_core::ErrorKind;

#[derive(Debug, Parser)]
#[command(name = "decompl", version, about = "Group activity recognition with decomposed attention pooling")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file, or `default` for the built-in values.
    #[arg(long, global = true, default_value = "default")]
    pub config: String,
    /// Override one config key, e.g. `--set train.epochs=30`. Repeatable;
    /// applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Seed for data generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "DECOMPL_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(commands::GenArgs),
    /// Train a model and save the best checkpoint.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(commands::EvalArgs),
    /// Train and evaluate ablation variants over several seeds.
    Ablate(commands::AblateArgs),
    /// Count parameters and FLOPs per frame.
    Profile(commands::ProfileArgs),
    /// Annotation tooling.
    #[command(subcommand)]
    Annotate(commands::AnnotateCommand),
}

/// Raised when `annotate validate` finds invalid records.
#[derive(Debug)]
pub struct Violations(pub usize);

impl std::fmt::Display for Violations {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} violations", self.0)
    }
}

impl std::error::Error for Violations {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Violations>().is_some() {
        return 3;
    }
    match err.downcast_ref::<decompl_core::Error>().map(|e| e.kind()) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Validation) => 3,
        Some(ErrorKind::Data) => 4,
        Some(ErrorKind::Internal) | None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => commands::gen(&cli.global, &a),
        Command::Train(a) => commands::train(&cli.global, &a),
        Command::Eval(a) => commands::eval(&cli.global, &a),
        Command::Ablate(a) => commands::ablate(&cli.global, &a),
        Command::Profile(a) => commands::profile(&cli.global, &a),
        Command::Annotate(a) => commands::annotate(&cli.global, &a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
