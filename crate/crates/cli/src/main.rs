//! Command-line laboratory for one-step generative modeling on synthetic
//! data: train average-velocity networks, sample from them, verify the
//! governing identity against brute-force oracles, and score samples.

use clap::{Parser, Subcommand};
use meanflow_cli::commands::{eval, export, sample, train, verify};

#[derive(Parser)]
#[command(name = "meanflow", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network from a TOML config and write checkpoints plus metrics.
    Train(train::TrainArgs),
    /// Draw samples from a checkpoint into a CSV file.
    Sample(sample::SampleArgs),
    /// Check the averaged-velocity identity against the oracle on a grid.
    Verify(verify::VerifyArgs),
    /// Score one-step samples from a checkpoint against reference data.
    Eval(eval::EvalArgs),
    /// Tabulate oracle and model fields on a grid for plotting.
    ExportField(export::ExportArgs),
}

/// Restores default SIGPIPE handling so piping into `head` ends the
/// process quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => train::run(args),
        Command::Sample(args) => sample::run(args),
        Command::Verify(args) => verify::run(args),
        Command::Eval(args) => eval::run(args),
        Command::ExportField(args) => export::run(args),
    };
    if let Err(err) = result {
        eprintln!("{err}");
        std::process::exit(err.code);
    }
}
