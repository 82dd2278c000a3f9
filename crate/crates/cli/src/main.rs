//! Command-line driver for the voice pathology pipeline.

mod layout;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use voicepath::hierarchy::ExperimentId;
use voicepath::ingest::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "voicepath", version, about = "Voice pathology pipeline")]
struct Cli {
    /// Pipeline config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Split unit: recording or segment.
    #[arg(long, global = true)]
    split_unit: Option<String>,
    /// Extra config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Rebuild artifacts even when their inputs are unchanged.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (WAV files and manifest) to a directory.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Silence removal, normalization and segmentation of manifest recordings.
    Preprocess,
    /// Mel spectrograms of every segment.
    Featurize,
    /// Suggest outlier exclusions for manual review.
    FlagOutliers,
    /// Write class-balanced training sets for inspection.
    Augment,
    /// Train the classifier(s) of one experiment.
    Train {
        #[arg(long)]
        exp: Option<ExperimentId>,
    },
    /// Score trained models on the held-out split.
    Evaluate {
        #[arg(long)]
        exp: Option<ExperimentId>,
    },
    /// Layer-wise CKA between the gender-specific classifiers and the gender power table.
    Analyze {
        #[arg(long)]
        exp: Option<ExperimentId>,
    },
    /// Assemble result tables from every evaluated experiment.
    Report,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("reading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    for s in &cli.sets {
        let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &cli.cache_dir {
        cfg.cache_dir = d.clone();
    }
    if let Some(m) = &cli.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(u) = &cli.split_unit {
        cfg.set("split_unit", u)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    let exp = |e: &Option<ExperimentId>, cfg: &mut PipelineConfig| {
        if let Some(e) = e {
            cfg.experiment = *e;
        }
    };
    let force = cli.force;
    match &cli.command {
        Command::Synth { out } => stages::synth(&cfg, out),
        Command::Preprocess => stages::preprocess(&cfg, force),
        Command::Featurize => stages::featurize(&cfg, force),
        Command::FlagOutliers => stages::flag_outliers(&cfg),
        Command::Augment => stages::augment(&cfg, force),
        Command::Train { exp: e } => {
            exp(e, &mut cfg);
            stages::train(&cfg, force)
        }
        Command::Evaluate { exp: e } => {
            exp(e, &mut cfg);
            stages::evaluate(&cfg)
        }
        Command::Analyze { exp: e } => {
            exp(e, &mut cfg);
            stages::analyze(&cfg)
        }
        Command::Report => stages::report(&cfg),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
