//! Command-line front end for the thzlink simulator and trainer.
//!
//! Subcommands mirror the library workflow: fit a mapper/demapper pair
//! (`train-conv`, `train-rl`), measure a saved pair (`eval`), run BER grids
//! (`sweep`), dump a learned constellation (`export-constellation`) and
//! inspect the physical budget of a hop (`link-budget`).
//!
//! Every experiment parameter lives in a flat key=value config file and can
//! be overridden per run with repeated `--set KEY=VALUE`; dedicated flags
//! cover file paths and mode switches. Exit codes: 0 success, 1
//! configuration error, 2 training divergence, 3 I/O failure.

mod budget;
mod eval;
mod settings;
mod sweep;
mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thzlink::exec::Exec;
use thzlink::training::Regime;
use thzlink::Error;

#[derive(Parser)]
#[command(
    name = "thzlink",
    version,
    about = "THz link simulator: train, evaluate and sweep IQI-robust modem pairs"
)]
struct Cli {
    /// Force single-threaded execution; results are identical either way.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Co-train mapper and demapper by backpropagating through the channel model.
    TrainConv(TrainArgs),
    /// Co-train with loss-only feedback to the mapper (policy gradient).
    TrainRl(TrainArgs),
    /// Measure a saved pair: cross-entropy and BER over a list of SNRs.
    Eval(EvalArgs),
    /// BER grid over m, IRR and SNR for one system kind.
    Sweep(SweepArgs),
    /// Write the constellation a saved mapper emits at an operating SNR.
    ExportConstellation(ExportArgs),
    /// Print the free-space and molecular-absorption budget of a link.
    LinkBudget(BudgetArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.rounds=800. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint prefix: writes PREFIX.tx.net, PREFIX.rx.net, PREFIX.meta
    /// and PREFIX.log.csv.
    #[arg(long, value_name = "PREFIX")]
    out: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint prefix written by a train command.
    #[arg(long, value_name = "PREFIX")]
    pair: Option<String>,
    /// Also write the measurements as sweep-schema CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Train a fresh pair at every learned grid point.
    #[arg(long)]
    train: bool,
    /// Sweep this saved pair instead of training per point.
    #[arg(long, value_name = "PREFIX")]
    pair: Option<String>,
    /// CSV destination; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint prefix written by a train command.
    #[arg(long, value_name = "PREFIX")]
    pair: Option<String>,
    /// Constellation text destination; stdout when omitted.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Operating SNR; the pair's training SNR when omitted.
    #[arg(long, value_name = "DB")]
    snr_db: Option<f64>,
}

#[derive(Args)]
struct BudgetArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // clap exits with 2 on bad usage by convention; this tool
            // reserves 2 for training divergence and treats bad usage as a
            // configuration error.
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::auto()
    };
    let outcome = match cli.command {
        Command::TrainConv(args) => train::run(
            Regime::Conventional,
            args.common.config.as_ref(),
            &args.common.set,
            args.out,
            exec,
        ),
        Command::TrainRl(args) => train::run(
            Regime::Reinforce,
            args.common.config.as_ref(),
            &args.common.set,
            args.out,
            exec,
        ),
        Command::Eval(args) => eval::run_eval(
            args.common.config.as_ref(),
            &args.common.set,
            args.pair,
            args.csv,
            exec,
        ),
        Command::Sweep(args) => sweep::run(
            args.common.config.as_ref(),
            &args.common.set,
            args.train,
            args.pair,
            args.csv,
            exec,
        ),
        Command::ExportConstellation(args) => eval::run_export(
            args.common.config.as_ref(),
            &args.common.set,
            args.pair,
            args.out,
            args.snr_db,
        ),
        Command::LinkBudget(args) => budget::run(args.common.config.as_ref(), &args.common.set),
    };
    if let Err(err) = outcome {
        eprintln!("error: {err}");
        std::process::exit(match err {
            Error::TrainingDiverged { .. } => 2,
            Error::Io(_) | Error::MalformedFile { .. } => 3,
            _ => 1,
        });
    }
}
