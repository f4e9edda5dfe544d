mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bspde::analysis::AnalysisError;
use bspde::solver::SolverError;
use bspde::stochastics::StochasticsError;

use config::ConfigError;

/// Backward stochastic PDE solver and verification harness.
#[derive(Parser)]
#[command(name = "bspde", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one partition and write the full solution lattice.
    Solve(RunArgs),
    /// Error against the closed form on every level of a ladder.
    Converge(RunArgs),
    /// Distance between the explicit and implicit schemes.
    Compare(RunArgs),
    /// Moment comparison of the Malliavin representation identity.
    CheckMalliavin(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, env = "BSPDE_WORKERS")]
    workers: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Use the negated backward difference at the right boundary.
    #[arg(long)]
    paper_literal_stencil: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Solve(a) => ("solve", a),
        Command::Converge(a) => ("converge", a),
        Command::Compare(a) => ("compare", a),
        Command::CheckMalliavin(a) => ("check-malliavin", a),
    };
    match commands::run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for bad input, 3 for numerical failure, 1 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<AnalysisError>() {
            return analysis_code(e);
        }
        if let Some(e) = cause.downcast_ref::<SolverError>() {
            return solver_code(e);
        }
        if let Some(e) = cause.downcast_ref::<StochasticsError>() {
            return stochastics_code(e);
        }
    }
    1
}

fn analysis_code(e: &AnalysisError) -> u8 {
    match e {
        AnalysisError::Solver(s) => solver_code(s),
        AnalysisError::Stochastics(s) => stochastics_code(s),
        AnalysisError::Output(_) => 1,
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn solver_code(e: &SolverError) -> u8 {
    match e {
        SolverError::Output(_) => 1,
        SolverError::Stochastics(s) => stochastics_code(s),
        e if e.is_numerical() => 3,
        _ => 2,
    }
}

fn stochastics_code(e: &StochasticsError) -> u8 {
    match e {
        StochasticsError::Output(_) => 1,
        StochasticsError::SingularDesign { .. } => 3,
        _ => 2,
    }
}
