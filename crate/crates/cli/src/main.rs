use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evonas::pipeline::{ExperimentConfig, Run, StageRecord, TrainOptions};
use evonas::searchspace::Genome;
use evonas::{Error, Result};

/// Hyper-network architecture search for speaker embeddings.
#[derive(Debug, Parser)]
#[command(name = "evonas", version)]
struct Cli {
    /// TOML experiment configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the synthetic corpus to a feature cache.
    GenData,
    /// Compute MFCC features for the configured WAV manifest.
    ExtractFeatures,
    /// Train the weight-sharing hyper-network.
    TrainHypernet {
        /// Continue from the latest checkpoint.
        #[arg(long)]
        resume: bool,
        /// Stop once this many total steps are done.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Search sub-networks of the trained hyper-network.
    Search {
        /// Search strategy by name (`memetic` or `random`).
        #[arg(long)]
        strategy: Option<String>,
    },
    /// Retrain the searched genome and the baseline from fresh weights.
    Retrain {
        /// Genome text to retrain instead of the latest search result.
        #[arg(long)]
        genome: Option<String>,
    },
    /// Score the full trial list with the retrained models.
    Evaluate,
    /// Write the comparison table and search summary.
    Report,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn announce(run: &Run, rec: &StageRecord) {
    println!("{} -> {}", rec.stage, run.root.join(&rec.dir).display());
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Command::Search { strategy: Some(s) } = &cli.command {
        cfg.search.strategy = s.clone();
    }
    // Genome text is checked before any stage runs.
    let genome = match &cli.command {
        Command::Retrain { genome: Some(text) } => Some(Genome::decode(text)?),
        _ => None,
    };
    let mut run = Run::open(cfg)?;
    let rec = match cli.command {
        Command::GenData => run.gen_data()?,
        Command::ExtractFeatures => run.extract_features()?,
        Command::TrainHypernet { resume, stop_after } => run.train_hypernet(TrainOptions { resume, stop_after })?,
        Command::Search { .. } => run.search()?,
        Command::Retrain { .. } => run.retrain(genome)?,
        Command::Evaluate => run.evaluate()?,
        Command::Report => {
            let report = run.report()?;
            for r in &report.systems {
                println!("{:<9} EER {:.4}  params {:>8}  {}", r.system, r.eer, r.param_count, r.genome);
            }
            run.manifest.latest("report").expect("report just written").clone()
        }
    };
    announce(&run, &rec);
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
