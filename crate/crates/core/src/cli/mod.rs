//! Command-line interface.

pub mod config;
mod evaluate;
mod extract;
mod generate;
mod synth;
mod train;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use cadenza_core::conditioners::RhythmProvider;
use cadenza_core::guidance::Task;
use cadenza_core::Error;

#[derive(Debug, Parser)]
#[command(name = "cadenza", version, about = "Musical attribute control, inpainting and outpainting with adapter-equipped latent diffusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract melody, dynamics and rhythm condition files from WAV audio.
    Extract(extract::Args),
    /// Train the backbone or an adapter set.
    Train(train::Args),
    /// Generate audio from a checkpoint.
    Generate(generate::Args),
    /// Score generated audio against references.
    Evaluate(evaluate::Args),
    /// Write the synthetic melody corpus used by the benchmark.
    Synth(synth::Args),
}

/// An error the user can fix: bad flags, missing or malformed inputs.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// 2 for user and input errors, 3 for numeric failures, 1 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 2;
        }
        if let Some(lib) = cause.downcast_ref::<Error>() {
            return lib.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<toml::de::Error>().is_some()
        {
            return 2;
        }
    }
    1
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Extract(a) => extract::run(a),
        Command::Train(a) => train::run(a),
        Command::Generate(a) => generate::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Synth(a) => synth::run(a),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Generate,
    Inpaint,
    Outpaint,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Generate => Task::Generate,
            TaskArg::Inpaint => Task::Inpaint,
            TaskArg::Outpaint => Task::Outpaint,
        }
    }
}

/// `builtin` or a path to a rhythm condition file.
pub fn rhythm_provider(s: &str) -> RhythmProvider {
    if s == "builtin" {
        RhythmProvider::Builtin
    } else {
        RhythmProvider::File(PathBuf::from(s))
    }
}

/// Fails with exit code 2 unless `path` exists.
pub fn require(path: &std::path::Path) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(usage(format!("file not found: {}", path.display())));
    }
    Ok(())
}
