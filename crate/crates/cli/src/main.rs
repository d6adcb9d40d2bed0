//! `dna-detect`: repair-score texts against a reference/observer model pair
//! and decide whether they look machine-generated.
//!
//! stdout carries line-delimited JSON (or CSV where noted); stderr carries
//! logs. Exit codes: 0 success, 2 usage/data error, 3 provider failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};

use crate::commands::{
    AttackArgs, CalibrateArgs, DetectArgs, EvalArgs, ScoreArgs, TrainNgramArgs, TrajectoryArgs,
};

#[derive(Parser)]
#[command(
    name = "dna-detect",
    version,
    about = "Detects AI-generated text by how little repair it takes to reach its ideal sequence",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score texts; one JSON line per input with the repair score and parts
    Score(ScoreArgs),
    /// Threshold repair scores into human/AI verdicts
    Detect(DetectArgs),
    /// Pick a detection threshold from a labeled corpus
    Calibrate(CalibrateArgs),
    /// AUROC / F1 evaluation over a labeled JSONL corpus
    Eval(EvalArgs),
    /// Emit the repair trajectory of one text as CSV
    Trajectory(TrajectoryArgs),
    /// Apply a seeded edit attack to a JSONL corpus
    Attack(AttackArgs),
    /// Train a byte-level n-gram reference/observer pair
    TrainNgram(TrainNgramArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Score(args) => commands::score(args),
        Command::Detect(args) => commands::detect(args),
        Command::Calibrate(args) => commands::calibrate(args),
        Command::Eval(args) => commands::eval(args),
        Command::Trajectory(args) => commands::trajectory(args),
        Command::Attack(args) => commands::attack(args),
        Command::TrainNgram(args) => commands::train_ngram(args),
    };
    if let Err(err) = result {
        eprintln!("error: {}", err.message);
        std::process::exit(err.code);
    }
}
