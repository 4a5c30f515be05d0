//! Command-line driver: corpus and vocabulary generation, weight
//! initialization, trace simulation, probe analysis and trace validation.
//!
//! The binary is a thin wrapper over [`run`]; every subcommand is also
//! callable as a `cmd_*` function.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod plan;
pub mod plot;
pub mod report;

use anyhow::Result;
use clap::{Parser, Subcommand};

pub use commands::{
    cmd_analyze, cmd_build_vocab, cmd_gen_corpus, cmd_init_weights, cmd_simulate, cmd_validate,
    AnalyzeArgs, AnalyzeKind, BuildVocabArgs, GenCorpusArgs, InitWeightsArgs, SimulateArgs,
    ValidateArgs,
};
pub use error::{exit_code_of, EXIT_INPUT, EXIT_INVALID, EXIT_OK};
pub use manifest::{Mode, RunManifest};

#[derive(Debug, Parser)]
#[command(
    name = "popprobe",
    version,
    about = "Layer-wise popularity probes for a toy decoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic question corpus (tab-separated).
    GenCorpus(GenCorpusArgs),
    /// Build a tokenizer vocabulary covering a corpus.
    BuildVocab(BuildVocabArgs),
    /// Write random or planted decoder weights.
    InitWeights(InitWeightsArgs),
    /// Run the decoder over every prompt of a run and write traces.
    Simulate(SimulateArgs),
    /// Compute a probe over a trace file and write CSV reports.
    Analyze(AnalyzeArgs),
    /// Check a trace file; exit 0 valid, 2 unreadable, 3 corrupt.
    Validate(ValidateArgs),
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(&a)?,
        Command::BuildVocab(a) => cmd_build_vocab(&a)?,
        Command::InitWeights(a) => cmd_init_weights(&a)?,
        Command::Simulate(a) => {
            cmd_simulate(&a)?;
        }
        Command::Analyze(a) => cmd_analyze(&a)?,
        Command::Validate(a) => return cmd_validate(&a),
    }
    Ok(EXIT_OK)
}
