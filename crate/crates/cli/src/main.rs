//! `mmlat`: channel statistics, power maps, simulation, MDP and LYRRC solves
//! and antenna sweeps from one JSON run configuration.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "mmlat", version = output::VERSION, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration. Missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one field, e.g. `--set system.antennas=32`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Effective-gain distribution summary and quantiles.
    ChannelStats,
    /// Power needed for every (rate, target error rate) pair.
    PowerMap,
    /// Monte-Carlo run of a policy, with its exact chain values.
    Simulate,
    /// Constrained MDP over the target error rate grid.
    Solve,
    /// Closed-form large-array policy.
    Lyrrc,
    /// LYRRC latency and lower bound over an antenna sweep.
    Curve,
    /// MDP for every user of a zero-forcing uplink.
    SolveMu,
    /// LYRRC for every user of a zero-forcing uplink.
    LyrrcMu,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::ChannelStats => "channel-stats",
            Command::PowerMap => "power-map",
            Command::Simulate => "simulate",
            Command::Solve => "solve",
            Command::Lyrrc => "lyrrc",
            Command::Curve => "curve",
            Command::SolveMu => "solve-mu",
            Command::LyrrcMu => "lyrrc-mu",
        }
    }
}

fn init_threads() -> anyhow::Result<()> {
    if let Ok(raw) = std::env::var("MMLAT_THREADS") {
        let n: usize = raw
            .parse()
            .map_err(|_| anyhow::anyhow!("MMLAT_THREADS must be a positive integer, got `{raw}`"))?;
        if n == 0 {
            anyhow::bail!("MMLAT_THREADS must be a positive integer, got 0");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    let mut overrides = cli.overrides;
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(out) = &cli.out {
        overrides.push(format!("output.path={}", serde_json::to_string(out)?));
    }
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    commands::dispatch(cli.command, cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
