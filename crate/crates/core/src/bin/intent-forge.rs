use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use intent_forge::config::{ExperimentConfig, Profile};
use intent_forge::pipeline::{Pipeline, Stage};
use intent_forge::{Error, Result};

/// Behavior extraction from reward-free data and online policy reuse.
#[derive(Debug, Parser)]
#[command(name = "intent-forge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML). Without it the profile defaults are used.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Default set the config is merged over: desk or paper.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Maximum parallel tasks within a stage.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Overrides master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Keep behaviors already recorded in the extraction manifest.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect the data tiers and their reward-free copies.
    GenDataset,
    /// Train one behavior per random intent.
    Extract,
    /// Run online training for every selector and seed.
    Online,
    /// Write return, entropy, coverage and scaling metrics.
    Analyze,
    /// Run every stage in order.
    All,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let profile = cli.profile.as_deref().map(str::parse::<Profile>).transpose()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            if !path.exists() {
                return Err(Error::MissingArtifact(path.clone()));
            }
            ExperimentConfig::load(path, profile)?
        }
        None => ExperimentConfig::for_profile(profile.unwrap_or(Profile::Desk)),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let pipeline = Pipeline::new(cfg, workers, cli.resume)?;
    log::info!("config hash {}", pipeline.config_hash());
    let artifacts = match cli.command {
        Command::GenDataset => pipeline.run(Stage::GenDataset)?,
        Command::Extract => pipeline.run(Stage::Extract)?,
        Command::Online => pipeline.run(Stage::Online)?,
        Command::Analyze => pipeline.run(Stage::Analyze)?,
        Command::All => pipeline.run_all()?,
    };
    for a in artifacts {
        println!("{}", a.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("INTENT_FORGE_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
