//! Command-line harness around `metalearn-core`: suite generation,
//! meta-training, evaluation reports and per-timestep traces.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod suite;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use commands::{cmd_eval, cmd_gen, cmd_meta_train, cmd_trace};
pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "metalearn", about = "Meta-learned LSTM learner: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Logreg,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a suite of datasets.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also export one CSV per dataset into this directory.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Meta-train the learner.
    MetaTrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint and baselines on a suite.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long = "baseline", value_enum)]
        baselines: Vec<BaselineArg>,
        #[arg(long = "external-scores")]
        external_scores: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the per-timestep trace of one dataset.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn dispatch(command: Command, log: &mut dyn Write) -> CliResult<()> {
    match command {
        Command::Gen {
            config,
            seed,
            count,
            out,
            csv,
        } => cmd_gen(
            &commands::GenArgs {
                config,
                seed,
                count,
                out,
                csv_dir: csv,
            },
            log,
        )
        .map(drop),
        Command::MetaTrain { config, seed, out } => {
            cmd_meta_train(&commands::MetaTrainArgs { config, seed, out }, log).map(drop)
        }
        Command::Eval {
            checkpoint,
            suite,
            baselines,
            external_scores,
            out,
        } => cmd_eval(
            &commands::EvalArgs {
                checkpoint,
                suite,
                baselines: baselines
                    .into_iter()
                    .map(|BaselineArg::Logreg| commands::Baseline::Logreg)
                    .collect(),
                external_scores,
                out,
            },
            log,
        )
        .map(drop),
        Command::Trace {
            checkpoint,
            suite,
            index,
            out,
        } => cmd_trace(
            &commands::TraceArgs {
                checkpoint,
                suite,
                index,
                out,
            },
            log,
        ),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match dispatch(cli.command, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
