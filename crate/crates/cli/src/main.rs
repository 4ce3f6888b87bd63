//! `tbauc` command-line interface.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use tbauc::inference::Direction;

use commands::{parent_dir, AnalyzeArgs, FitArgs, ReplicateArgs, SimulateArgs};
use manifest::Recorder;

#[derive(Debug, Parser)]
#[command(
    name = "tbauc",
    version,
    about = "Composite tumor-burden and survival endpoint: simulate, fit, test"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate one synthetic trial.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenario: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// JSON object overriding fields of the scenario design.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Draw from the joint posterior of a dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// JSON object with optional `sampler` and `prior` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output draws CSV.
        #[arg(long)]
        out: PathBuf,
        /// Retained draws (overrides the config file).
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the per-subject random-effect columns out of the draws file.
        #[arg(long)]
        no_random_effects: bool,
    },
    /// Endpoints and Wald tests from posterior draws.
    Analyze {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Post-event penalty.
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 0.025)]
        alpha: f64,
        #[arg(long, default_value = "left", value_parser = parse_direction)]
        direction: Direction,
        /// Seed of the bootstrap weights.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output tests CSV; the other tables go to the same directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo study over one or more scenarios.
    Replicate {
        /// Scenario number; repeat for several.
        #[arg(long = "scenario", required = true, value_parser = clap::value_parser!(u8).range(1..=4))]
        scenarios: Vec<u8>,
        #[arg(long)]
        reps: Option<usize>,
        /// Retained draws per fit.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// JSON object overriding study settings (`design`, `sampler`, ...).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Re-aggregate replication files into tables and a summary.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory (default: the input directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_direction(s: &str) -> Result<Direction, String> {
    s.parse().map_err(|e: tbauc::Error| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (name, dir) = match &cli.command {
        Command::Simulate { out, .. } => ("simulate", out.clone()),
        Command::Fit { out, .. } => ("fit", parent_dir(out)),
        Command::Analyze { out, .. } => ("analyze", parent_dir(out)),
        Command::Replicate { out, .. } => ("replicate", out.clone()),
        Command::Report { input, out } => ("report", out.clone().unwrap_or_else(|| input.clone())),
    };
    let mut rec = Recorder::new(name);
    let result = match cli.command {
        Command::Simulate {
            scenario,
            seed,
            out,
            config,
        } => commands::simulate(
            SimulateArgs {
                scenario,
                seed,
                out,
                config,
            },
            &mut rec,
        ),
        Command::Fit {
            data,
            config,
            out,
            q,
            warmup,
            chains,
            seed,
            no_random_effects,
        } => commands::fit(
            FitArgs {
                data,
                out,
                config,
                q,
                warmup,
                chains,
                seed,
                no_random_effects,
            },
            &mut rec,
        ),
        Command::Analyze {
            draws,
            data,
            gamma,
            alpha,
            direction,
            seed,
            out,
        } => commands::analyze(
            AnalyzeArgs {
                draws,
                data,
                gamma,
                alpha,
                direction,
                seed,
                out,
            },
            &mut rec,
        ),
        Command::Replicate {
            scenarios,
            reps,
            q,
            warmup,
            seed,
            workers,
            out,
            config,
        } => {
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            commands::replicate(
                ReplicateArgs {
                    scenarios,
                    reps,
                    q,
                    warmup,
                    seed,
                    workers,
                    out,
                    config,
                },
                &mut rec,
            )
        }
        Command::Report { input, .. } => commands::report(&input, &dir, &mut rec),
    };

    let error = result.as_ref().err().map(|e| e.to_string());
    let written = rec.finish(&dir, error);
    match (result, written) {
        (Ok(()), Ok(_)) => ExitCode::SUCCESS,
        (Err(e), _) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
        (Ok(()), Err(e)) => {
            eprintln!("error: writing manifest: {e}");
            ExitCode::from(2)
        }
    }
}
