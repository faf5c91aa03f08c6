//! `slda` command line: seeded environment runs, one-step policy
//! iteration, trajectory-noise augmentation, and benchmark sweeps.
//!
//! Every verb reads an optional JSON config file (defaults apply when it
//! is omitted) and a shared set of override flags. Failures print a
//! single-line JSON error record to stderr and exit nonzero.

mod ops;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ops::Overrides;

#[derive(Parser)]
#[command(name = "slda", version, about = "Self-learning design agent toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Truss design environment.
    Truss {
        #[command(subcommand)]
        command: TrussCommand,
    },
    /// Capacitated grid-routing environment.
    Route {
        #[command(subcommand)]
        command: RouteCommand,
    },
    /// One policy-iteration step: generate with search, train the policy.
    Train(VerbArgs),
    /// Rebuild-order augmentation of a truss dataset.
    Augment(VerbArgs),
    /// Budget-sweep experiments with CSV output.
    Bench(VerbArgs),
}

#[derive(Subcommand)]
enum TrussCommand {
    /// Search-driven design episodes on a boundary condition.
    Run(VerbArgs),
}

#[derive(Subcommand)]
enum RouteCommand {
    /// Search-driven routing episodes on one problem.
    Run(VerbArgs),
}

#[derive(Args)]
struct VerbArgs {
    /// JSON config file; built-in defaults apply when omitted.
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Truss {
            command: TrussCommand::Run(args),
        } => ops::truss_run(args.config.as_deref(), &args.overrides),
        Command::Route {
            command: RouteCommand::Run(args),
        } => ops::route_run(args.config.as_deref(), &args.overrides),
        Command::Train(args) => ops::train(args.config.as_deref(), &args.overrides),
        Command::Augment(args) => ops::augment(args.config.as_deref(), &args.overrides),
        Command::Bench(args) => ops::bench(args.config.as_deref(), &args.overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
