//! `voxfuse`: project 2D features into voxel volumes with depth priors,
//! warp grids between frames, evaluate scene-completion outputs, and
//! generate synthetic test sequences.
//!
//! Exit codes: 0 on success, 2 on I/O failures, 3 on validation failures.

mod commands;
mod common;

use clap::Parser;
use common::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "voxfuse",
    version,
    about = "Camera/LiDAR fusion geometry toolkit",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Subcommand)]
enum Command {
    /// Project per-pixel features into a voxel grid along depth-prior rays.
    Project(commands::project::ProjectArgs),
    /// Warp a voxel grid between two camera frames.
    Warp(commands::warp::WarpArgs),
    /// Score a predicted label grid against ground truth.
    Eval(commands::eval::EvalArgs),
    /// Score agreement between consecutive frames of a sequence.
    Consistency(commands::consistency::ConsistencyArgs),
    /// Generate a synthetic sequence (world, frames, depth, features, GT).
    Synth(commands::synth::SynthArgs),
}

fn main() {
    // Usage problems are validation failures and must exit 3, so clap's
    // default exit(2) is intercepted here.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let is_help = matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = err.print();
            std::process::exit(if is_help { 0 } else { 3 });
        }
    };

    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(3);
        }
        // Ignore failure if a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    let result = match cli.command {
        Command::Project(args) => commands::project::run(args),
        Command::Warp(args) => commands::warp::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Consistency(args) => commands::consistency::run(args),
        Command::Synth(args) => commands::synth::run(args),
    };

    match result {
        Ok(()) => {}
        Err(CliError::Io(message)) => {
            eprintln!("error: {message}");
            std::process::exit(2);
        }
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            std::process::exit(3);
        }
    }
}
