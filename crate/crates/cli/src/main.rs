//! `slq`: solve, simulate, verify, certify and refine stochastic LQ scenarios.
//!
//! Exit codes: 0 success, 1 I/O or numeric fault, 2 not certified / evidence
//! against convexity / non-monotone refinement, 3 statistical rejection,
//! 4 inconclusive convexity.

mod commands;
mod report;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "slq",
    version,
    about = "Closed-loop stochastic LQ synthesis on spectrally truncated models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the Riccati equation and certify the solution.
    Solve(Common),
    /// Simulate the closed loop (or the uncontrolled system) and estimate the cost.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Simulate with u = 0 instead of the Riccati feedback.
        #[arg(long)]
        zero_control: bool,
        /// Write every state and control sample (long CSV format).
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Check the value function, completion of squares and optimality by Monte Carlo.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Number of random perturbations.
        #[arg(long, default_value_t = 20)]
        perturbations: usize,
        /// Paths per perturbation run (default: min(paths, 10000)).
        #[arg(long)]
        perturbation_paths: Option<usize>,
        /// Add this multiple of the identity to P before comparing.
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_bias: f64,
    },
    /// Certify uniform convexity of the cost functional.
    Convexity {
        #[command(flatten)]
        common: Common,
        /// Slack in the terminal-weight test (default: 0.1 sup|R|, or 0.1 if R = 0).
        #[arg(long)]
        eps0: Option<f64>,
        /// Basis size for the Hessian estimate (multiple of k).
        #[arg(long)]
        basis: Option<usize>,
    },
    /// Compare Riccati solutions across Galerkin truncation levels.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Truncation levels, strictly increasing, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        /// Also compare whole paths, not only the initial time.
        #[arg(long)]
        full_path: bool,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Scenario file (TOML or JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Monte Carlo paths (default: scenario mc_paths).
    #[arg(long)]
    paths: Option<usize>,
    /// Replace the scenario seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Stopping tolerance of the Riccati iteration.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 50)]
    max_iter: usize,
    /// Relative eigenvalue cutoff for pseudo-inverses.
    #[arg(long, default_value_t = 1e-10)]
    rank_tol: f64,
    /// Grid step counts; the last one replaces the scenario's m.
    #[arg(long, value_delimiter = ',')]
    grids: Vec<usize>,
    /// Worker thread cap; results do not depend on it.
    #[arg(long, env = "SLQ_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_FAULT)
        }
    }
}
