use std::path::PathBuf;
use std::process::ExitCode;

use ato::config::{load_config, load_tracking_config};
use ato::harness::{
    lower_bounds, run_experiment, run_tracking_experiment, simulate, with_output, write_bounds_csv, write_experiment_csv,
    write_sim_csv, write_sweep_csv, HarnessError,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ato", version, about = "Assemble-to-order lower bounds and policy simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stochastic-program lower bound of every case.
    LowerBound(Common),
    /// Policy replications of every case.
    Simulate(Common),
    /// Lower bound, replications and optimality gap per case.
    Experiment(Common),
    /// Tracking-model convergence sweep.
    Tracking(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; defaults to the configured output or standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

fn tracking(c: Common) -> Result<(), HarnessError> {
    let mut cfg = load_tracking_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    let rows = run_tracking_experiment(&cfg, c.threads)?;
    let out = c.out.or(cfg.output.clone());
    with_output(out.as_deref(), |w| write_sweep_csv(&rows, w))
}

fn run_verb(verb: &str, c: Common) -> Result<(), HarnessError> {
    let mut cfg = load_config(&c.config)?;
    if let Some(s) = c.seed {
        cfg.sim.seed = s;
    }
    let out = c.out.or(cfg.output.clone());
    match verb {
        "lower-bound" => {
            let rows = lower_bounds(&cfg, c.threads)?;
            with_output(out.as_deref(), |w| write_bounds_csv(&rows, cfg.sim.record_timings, w))
        }
        "simulate" => {
            let rows = simulate(&cfg, c.threads)?;
            with_output(out.as_deref(), |w| write_sim_csv(&rows, w))
        }
        _ => {
            let report = run_experiment(&cfg, c.threads);
            with_output(out.as_deref(), |w| write_experiment_csv(&report.rows, w))?;
            match report.error {
                Some(e) => Err(e),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::LowerBound(c) => run_verb("lower-bound", c),
        Command::Simulate(c) => run_verb("simulate", c),
        Command::Experiment(c) => run_verb("experiment", c),
        Command::Tracking(c) => tracking(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
