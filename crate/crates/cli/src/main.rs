mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::artifacts::Store;
use crate::commands::{ConditionedChoice, DataKind, EvalKind, EvalOptions, TabularChoice, TrainStage};
use crate::config::RunConfig;

/// Environment variable naming the default artifact directory.
const ARTIFACTS_ENV: &str = "PREFALIGN_ARTIFACTS";

#[derive(Debug, Parser)]
#[command(name = "prefalign", version, about = "Prompt-adaptive preference alignment laboratory")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, env = ARTIFACTS_ENV)]
    out: Option<PathBuf>,
    /// Proceed even when upstream artifacts are stale.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the synthetic world.
    MakeWorld,
    /// Sample a preference dataset from the world.
    GenData {
        #[arg(value_enum)]
        kind: DataKind,
    },
    /// Run one training stage.
    Train {
        #[arg(value_enum)]
        stage: TrainStage,
    },
    /// Produce a report table under `reports/`.
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        /// Policy to evaluate: fixed|adaptive for `gap`, offline|online for `pareto`.
        #[arg(long)]
        policy: Option<String>,
    },
}

fn store(cli: &Cli) -> Result<Store> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let root = cli
        .out
        .clone()
        .or_else(|| config.artifacts.clone())
        .unwrap_or_else(|| PathBuf::from("artifacts"));
    Store::new(root, config, cli.force)
}

fn run(cli: Cli) -> Result<()> {
    let store = store(&cli)?;
    match cli.command {
        Command::MakeWorld => commands::make_world(&store),
        Command::GenData { kind } => commands::gen_data(&store, kind),
        Command::Train { stage } => commands::train(&store, stage),
        Command::Eval { kind, policy } => {
            if let Some(p) = &policy {
                let ok = match kind {
                    EvalKind::Gap => <TabularChoice as clap::ValueEnum>::from_str(p, true).is_ok(),
                    EvalKind::Pareto => <ConditionedChoice as clap::ValueEnum>::from_str(p, true).is_ok(),
                    _ => false,
                };
                if !ok {
                    anyhow::bail!("--policy {p} does not apply to `eval {kind:?}`");
                }
            }
            let path = commands::eval(&store, kind, &EvalOptions { policy })?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
