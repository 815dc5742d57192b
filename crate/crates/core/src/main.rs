//! `jamsure` command-line front end.
//!
//! Exit codes: 0 on success, 1 when the analysis itself fails (infeasible
//! certificate or rate, singular matrix, too many diverged runs), 2 for
//! usage, configuration and I/O problems.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use jamsure::config::ExperimentConfig;
use jamsure::experiments;
use jamsure::loss::JamStrategy;
use jamsure::Result;

#[derive(Parser)]
#[command(
    name = "jamsure",
    version,
    about = "Event-triggered control over a lossy, jammable network: \
             simulation, loss and stability certificates, gain synthesis"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the stability certificate for explicitly given gains.
    Certify(RunArgs),
    /// Search the drift curve for LMI-feasible (beta, phi) and a gain.
    Synthesize(RunArgs),
    /// Monte Carlo closed-loop simulation with per-trajectory CSV output.
    Simulate(RunArgs),
    /// Tail-bound certificate for the combined failure process.
    Bounds(RunArgs),
    /// Re-run the packaged reference study end to end.
    ReproducePaper(ReproduceArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment description (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the configured one, then "out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the configured trajectory count.
    #[arg(long)]
    trajectories: Option<u64>,
    /// Override the configured jamming strategy.
    #[arg(long, value_enum)]
    attacker: Option<Attacker>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Attacker {
    /// Attack whenever the budget permits.
    Greedy,
    /// Attack every 2nd exchange, budget permitting.
    Periodic,
    /// Attack independently with probability 0.5, budget permitting.
    Random,
    /// Attack exactly the exchanges the channel did not already lose.
    Reactive,
}

impl Attacker {
    fn to_strategy(self) -> JamStrategy {
        match self {
            Attacker::Greedy => JamStrategy::Greedy,
            Attacker::Periodic => JamStrategy::Periodic { period: 2 },
            Attacker::Random => JamStrategy::Random { rate: 0.5 },
            Attacker::Reactive => JamStrategy::Reactive,
        }
    }
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> PathBuf {
        if let Some(seed) = self.seed {
            cfg.run.base_seed = seed;
        }
        if let Some(n) = self.trajectories {
            cfg.run.trajectories = n;
        }
        if let Some(attacker) = self.attacker {
            cfg.loss.jamming.strategy = attacker.to_strategy();
        }
        self.out
            .clone()
            .or_else(|| cfg.run.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn load(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    let out = args.overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Certify(args) => {
            let (cfg, out) = load(&args)?;
            experiments::cmd_certify(&cfg, &out)?;
        }
        Cmd::Synthesize(args) => {
            let (cfg, out) = load(&args)?;
            experiments::cmd_synthesize(&cfg, &out)?;
        }
        Cmd::Simulate(args) => {
            let (cfg, out) = load(&args)?;
            experiments::cmd_simulate(&cfg, &out)?;
        }
        Cmd::Bounds(args) => {
            let (cfg, out) = load(&args)?;
            experiments::cmd_bounds(&cfg, &out)?;
        }
        Cmd::ReproducePaper(args) => {
            let mut cfg = experiments::reference_config()?;
            let out = args.overrides.apply(&mut cfg);
            cfg.validate()?;
            experiments::cmd_reproduce(&cfg, &out)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
