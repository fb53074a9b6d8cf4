//! Command-line front end: `synth`, `train`, `predict`, `eval`, `inspect`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or I/O
//! error, 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

pub use config::{ConfigFile, EvalSettings, PredictSettings, SynthSettings, TrainSettings};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] hybridseg::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) => EXIT_DATA,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Core(e) if e.is_data() || matches!(e, hybridseg::Error::Io(_)) => EXIT_DATA,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hybridseg", version, about = "Boundary detection in mixed human/machine text")]
pub struct Cli {
    /// TOML file with [synth], [train], [predict] and [eval] tables.
    #[arg(long, global = true, env = "HYBRIDSEG_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and its embedding file.
    #[command(args_override_self = true)]
    Synth(config::SynthArgs),
    /// Train a segmenter.
    #[command(args_override_self = true)]
    Train(config::TrainArgs),
    /// Predict labels and boundaries for a dataset.
    #[command(args_override_self = true)]
    Predict(config::PredictArgs),
    /// Score predictions against gold labels.
    #[command(args_override_self = true)]
    Eval(config::EvalArgs),
    /// Summarize a model, dataset or embedding file.
    Inspect {
        path: PathBuf,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, A>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Synth(args) => {
            let mut s = file.synth;
            args.apply(&mut s);
            writeln!(err, "{}", config::render("synth", &s))?;
            commands::run_synth(&s, out)
        }
        Command::Train(args) => {
            let mut s = file.train;
            args.apply(&mut s);
            writeln!(err, "{}", config::render("train", &s))?;
            commands::run_train(&s, out, err)
        }
        Command::Predict(args) => {
            let mut s = file.predict;
            args.apply(&mut s);
            writeln!(err, "{}", config::render("predict", &s))?;
            commands::run_predict(&s, out)
        }
        Command::Eval(args) => {
            let mut s = file.eval;
            args.apply(&mut s);
            writeln!(err, "{}", config::render("eval", &s))?;
            commands::run_eval(&s, out)
        }
        Command::Inspect { path } => commands::run_inspect(&path, out),
    }
}
