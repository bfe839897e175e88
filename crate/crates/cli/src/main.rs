use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtad_gat_cli::commands::{self, DiagnoseArgs, EvaluateArgs, ScoreArgs, SynthArgs, ThresholdArgs, TrainArgs};
use mtad_gat_cli::{CliResult, RunConfig};
use serde::Serialize;

/// Graph-attention anomaly detection for multivariate time series.
#[derive(Debug, Parser)]
#[command(name = "mtad-gat", version)]
struct Cli {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for training, scoring noise and the synthetic generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Synth(SynthArgs),
    /// Fit a model and write a checkpoint.
    Train(TrainArgs),
    /// Write per-timestamp anomaly scores.
    Score(ScoreArgs),
    /// Fit the POT threshold and write alarms.
    Threshold(ThresholdArgs),
    /// Precision, recall and F1 of alarms against labels.
    Evaluate(EvaluateArgs),
    /// Rank features per labelled event and score the ranking.
    Diagnose(DiagnoseArgs),
}

fn print<T: Serialize>(value: &T) {
    match serde_json::to_string_pretty(value) {
        Ok(s) => println!("{s}"),
        Err(e) => eprintln!("warning: could not print the summary: {e}"),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.set_seed(s);
    }
    cfg.validate()?;
    match &cli.command {
        Command::Synth(a) => print(&commands::synth(&cfg, a)?),
        Command::Train(a) => {
            let history = commands::train(&cfg, a)?;
            if let Some(last) = history.last() {
                println!("trained {} epochs, final loss {:.6}", last.epoch, last.train_loss);
            }
        }
        Command::Score(a) => print(&commands::score(&cfg, a)?),
        Command::Threshold(a) => print(&commands::threshold(&cfg, a)?),
        Command::Evaluate(a) => print(&commands::evaluate(&cfg, a)?),
        Command::Diagnose(a) => print(&commands::diagnose(&cfg, a)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
