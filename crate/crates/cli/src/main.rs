//! `slfcert` command-line driver.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Outcome;

#[derive(Parser)]
#[command(
    name = "slfcert",
    version,
    about = "Stochastic Lyapunov certification from scenario files"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Seed; overrides SLFCERT_SEED and the scenario.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a candidate and conclude stability.
    Classify(Common),
    /// Certify an LQG regulator.
    Lqg(Common),
    /// Monte Carlo estimates of the stopped process.
    Simulate(Common),
    /// Fit one connector curve and export it.
    Smooth(Common),
    /// Merge the JSON artifacts of a directory into summary.json.
    Report {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn set_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

type Handler = fn(&scenario::Loaded, &std::path::Path) -> anyhow::Result<Outcome>;

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let (common, f): (Common, Handler) = match cli.command {
        Command::Report { out, threads, .. } => {
            set_threads(threads)?;
            return commands::report_cmd(&out);
        }
        Command::Classify(c) => (c, commands::classify_cmd),
        Command::Lqg(c) => (c, commands::lqg_cmd),
        Command::Simulate(c) => (c, commands::simulate_cmd),
        Command::Smooth(c) => (c, commands::smooth_cmd),
    };
    set_threads(common.threads)?;
    let loaded = scenario::load(&common.scenario, common.seed)?;
    f(&loaded, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(Outcome::Certified) => ExitCode::SUCCESS,
        Ok(Outcome::NotVerified) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
