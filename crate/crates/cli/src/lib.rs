//! Command-line front end for `expsel-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod render;

use std::io::Write;

use clap::{Parser, Subcommand};

pub use commands::{
    cmd_build_map, cmd_evaluate, cmd_ingest, cmd_localize, cmd_rank, cmd_render, cmd_synth,
};
pub use config::{RunConfig, DEFAULT_SEED};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "expsel", version, about = "Pick the map experience that best matches live conditions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a FEX1 feature file and optionally copy it into a store.
    Ingest(RunConfig),
    /// Build a map (shared edges plus per-experience summaries) from a store.
    BuildMap(RunConfig),
    /// Rank map experiences against a query's warmup frames.
    Rank(RunConfig),
    /// Localise a query against reference experiences and report Recall@1.
    Localize(RunConfig),
    /// Leave-one-out ranking evaluation, or fixture mode from CSV tables.
    Evaluate(RunConfig),
    /// Render a difference matrix as a greyscale PGM image.
    Render(RunConfig),
    /// Write seeded synthetic experiences into a store.
    Synth(RunConfig),
}

/// Resolves the config file under the flags and runs the command.
pub fn run(command: Command, out: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Ingest(c) => cmd_ingest(&RunConfig::resolve(c)?, out).map(drop),
        Command::BuildMap(c) => cmd_build_map(&RunConfig::resolve(c)?, out).map(drop),
        Command::Rank(c) => cmd_rank(&RunConfig::resolve(c)?, out).map(drop),
        Command::Localize(c) => cmd_localize(&RunConfig::resolve(c)?, out).map(drop),
        Command::Evaluate(c) => cmd_evaluate(&RunConfig::resolve(c)?, out).map(drop),
        Command::Render(c) => cmd_render(&RunConfig::resolve(c)?, out),
        Command::Synth(c) => cmd_synth(&RunConfig::resolve(c)?, out).map(drop),
    }
}
