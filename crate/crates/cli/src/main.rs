//! `psched`: perception-scheduling experiments from a JSON configuration.
//!
//! Exit codes: 0 success (or admissible), 1 not admissible, 2 invalid input,
//! 3 schedule-set construction failed, 4 more than 1% of paths diverged.

mod commands;
mod config;
mod setfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use perception_sched::simlab::Profile;

use commands::Failure;
use config::Overrides;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Desk,
    Paper,
}

#[derive(Debug, Parser)]
#[command(name = "psched", version, about = "Stability-preserving perception scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Schedule-set file, or a directory of them.
    #[arg(long, global = true)]
    sets: Option<PathBuf>,
    /// Output directory (build-sets, simulate) or file (plan).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides `sim.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `sim.paths`.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Step, horizon and path-count preset; explicit --paths still wins.
    #[arg(long, global = true, value_enum)]
    profile: Option<ProfileArg>,
    /// Skip re-verifying admissibility of loaded sets.
    #[arg(long, global = true)]
    trust_sets: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Admissibility report for a schedule set.
    Check,
    /// Build `policy.m` admissible schedule sets into --out.
    BuildSets,
    /// Monte Carlo campaign with the configured policy.
    Simulate,
    /// Optimal SP² plan over `cost.T_f` from the initial belief.
    Plan,
}

fn required(v: &Option<PathBuf>, flag: &str) -> Result<PathBuf, Failure> {
    v.clone().ok_or_else(|| Failure::invalid(anyhow::anyhow!("{flag} is required")))
}

fn run(cli: &Cli) -> commands::Outcome {
    let overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        profile: cli.profile.map(|p| match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }),
    };
    let path = required(&cli.config, "--config")?;
    let exp = config::load(&path, &overrides).map_err(Failure::invalid)?;
    match cli.command {
        Command::Check => commands::check(&exp, &required(&cli.sets, "--sets")?),
        Command::BuildSets => commands::build_sets(&exp, &required(&cli.out, "--out")?),
        Command::Simulate => commands::simulate(&exp, cli.sets.as_deref(), &required(&cli.out, "--out")?, cli.trust_sets),
        Command::Plan => commands::plan(&exp, cli.sets.as_deref(), cli.out.as_deref(), cli.trust_sets),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { commands::INVALID } else { commands::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code as u8)
        }
    }
}
