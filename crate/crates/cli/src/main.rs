use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dqtraj_cli::config::{load_config, ExperimentKind};
use dqtraj_cli::output::{num, verdict};
use dqtraj_cli::run::{run, RunOptions};

/// Disordered quantum trajectories: simulate and check ergodic limits.
#[derive(Parser)]
#[command(name = "dqtraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: `<output>/<experiment>` next to the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, env = "DQTRAJ_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check fibers, stationarity of the symbol law and the initial state.
    Validate(Common),
    /// Sample trajectories and write them out.
    Simulate(Common),
    /// Solve for the ω-dependent stationary state at a few anchors.
    Stationary(Common),
    /// Certify dynamical ergodicity numerically.
    Certify(Common),
    /// Outcome-pattern law of large numbers.
    Lln(Common),
    /// Cesàro averages of annealed measures along the shift.
    AnnealedLln(Common),
    /// Compare quenched frequencies across environment points and initial states.
    QuenchedErg(Common),
    /// Check the quenched shift identity by enumeration.
    ShiftCheck(Common),
    /// Run the experiment named in `experiment.kind`.
    Run(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common) = match cli.command {
        Command::Validate(c) => (Some(ExperimentKind::Validate), c),
        Command::Simulate(c) => (Some(ExperimentKind::Simulate), c),
        Command::Stationary(c) => (Some(ExperimentKind::Stationary), c),
        Command::Certify(c) => (Some(ExperimentKind::Certify), c),
        Command::Lln(c) => (Some(ExperimentKind::Lln), c),
        Command::AnnealedLln(c) => (Some(ExperimentKind::AnnealedLln), c),
        Command::QuenchedErg(c) => (Some(ExperimentKind::QuenchedErg), c),
        Command::ShiftCheck(c) => (Some(ExperimentKind::ShiftCheck), c),
        Command::Run(c) => (None, c),
    };
    let cfg = match load_config(&common.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let Some(kind) = kind.or(cfg.kind) else {
        eprintln!("error: config {} has no experiment.kind; use a named subcommand", common.config.display());
        return ExitCode::from(2);
    };
    let opts = RunOptions { seed: common.seed, out: common.out, threads: common.threads };
    match run(&cfg, kind, &opts) {
        Ok(outcome) => {
            for r in &outcome.rows {
                println!("{} {} = {} (target {}, tol {})", verdict(r.pass), r.quantity, num(r.value), num(r.target), num(r.tolerance));
            }
            println!("{}: {} -> {}", kind.name(), verdict(outcome.pass), outcome.out_dir.display());
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
