use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;
use lstmhra_cli::config::{self, Mode};
use lstmhra_cli::experiments;

/// Runs LSTMH-RA simulations, the closed-form model and predictor experiments.
#[derive(Debug, Parser)]
#[command(name = "lstmhra", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,

    /// Overrides `master_seed`.
    #[arg(short, long)]
    seed: Option<u64>,

    /// Overrides `output_dir`.
    #[arg(short, long)]
    output_dir: Option<PathBuf>,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

fn run(args: &Args) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = config::parse(&text).with_context(|| format!("in {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    std::fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    let artifacts = experiments::run(&cfg)?;
    for a in artifacts {
        let path = cfg.output_dir.join(&a.path);
        write(&path, &a.contents)?;
        println!("wrote {}", path.display());
    }
    if cfg.mode == Mode::TrainPredictor {
        log::info!("model saved; run eval-predictor with the same output directory to score it");
    }
    Ok(())
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = match args.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
