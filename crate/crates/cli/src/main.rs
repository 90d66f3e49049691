mod commands;
mod plot;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvaluateArgs, IngestArgs, PredictArgs, StatsArgs, SynthArgs, TrainArgs};
use somno_core::Error;

/// Sleep staging from single-channel EEG.
#[derive(Debug, Parser)]
#[command(name = "somno", version)]
struct Cli {
    /// More logging (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert raw EDF recordings and hypnograms into a canonical dataset.
    Ingest(IngestArgs),
    /// Train the representation stage, the sequence stage, or both.
    Train(TrainArgs),
    /// Subject-wise cross-validation with aggregate tables.
    Evaluate(EvaluateArgs),
    /// Stage a recording with a trained model and flag uncertain epochs.
    Predict(PredictArgs),
    /// Dataset statistics and significance tests.
    Stats(StatsArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

/// Exit status per failure family.
fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return 1;
    };
    match err.root() {
        Error::Config(_) => 2,
        Error::ChannelNotFound { .. }
        | Error::Parse(_)
        | Error::Alignment(_)
        | Error::EmptyDataset(_)
        | Error::EmptyEvaluation
        | Error::Label(_)
        | Error::Io { .. } => 3,
        Error::Checkpoint(_) | Error::Transfer(_) => 4,
        Error::Numerical { .. } => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Ingest(a) => commands::ingest(a),
        Command::Train(a) => commands::train(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Predict(a) => commands::predict(a),
        Command::Stats(a) => commands::stats(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
