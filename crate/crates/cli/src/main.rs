//! `smpc`: reproducible scenario-MPC experiments from the command line.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use smpc_core::config::CONFIG_ENV_VAR;
use smpc_core::ExperimentConfig;

/// Seed used when none is given, so that bare invocations are reproducible.
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "smpc", version, about = "Scenario MPC energy management experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Configuration and overrides shared by every subcommand. Precedence:
/// flags, then the config file, then the built-in defaults.
#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration layered over the built-in defaults.
    #[arg(long, global = true, env = CONFIG_ENV_VAR)]
    config: Option<PathBuf>,
    /// ADMM penalty on the input consensus.
    #[arg(long, global = true)]
    rho1: Option<f64>,
    /// ADMM penalty on the energy dynamics.
    #[arg(long, global = true)]
    rho2: Option<f64>,
    /// ADMM penalty on the first-input agreement across scenarios.
    #[arg(long, global = true)]
    rho3: Option<f64>,
    /// ADMM termination threshold on the residual norms.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// ADMM iteration limit of a standalone solve.
    #[arg(long, global = true)]
    max_iterations: Option<usize>,
    /// Iteration budget of each closed-loop update.
    #[arg(long, global = true)]
    max_iterations_per_update: Option<usize>,
    /// Number of scenarios S used by scenario MPC.
    #[arg(long, global = true)]
    scenarios: Option<usize>,
}

impl GlobalArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        let admm = &mut cfg.admm;
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut admm.rho1, self.rho1);
        set(&mut admm.rho2, self.rho2);
        set(&mut admm.rho3, self.rho3);
        set(&mut admm.epsilon, self.epsilon);
        if let Some(m) = self.max_iterations {
            admm.max_iterations = m;
        }
        if let Some(m) = self.max_iterations_per_update {
            cfg.simulation.max_iterations_per_update = Some(m);
        }
        if let Some(s) = self.scenarios {
            cfg.scenario.max_scenarios = Some(s);
        }
        cfg.validate().context("invalid configuration")?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic route database.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        journeys: usize,
    },
    /// Drive one journey with one controller.
    Simulate {
        #[arg(long)]
        db: PathBuf,
        /// Journey identifier from the database manifest.
        #[arg(long)]
        journey: String,
        #[arg(long, value_enum, default_value_t = Controller::Scenario)]
        controller: Controller,
        #[arg(long)]
        out: PathBuf,
        /// Spacing of the distance-resampled log, m.
        #[arg(long, default_value_t = 10.0)]
        distance_spacing: f64,
    },
    /// Cross-validate scenario MPC against nominal MPC on every journey.
    Compare {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Restrict to these journeys (comma separated).
        #[arg(long, value_delimiter = ',')]
        journeys: Option<Vec<String>>,
        /// Spacing of the distance-resampled logs, m.
        #[arg(long, default_value_t = 10.0)]
        distance_spacing: f64,
    },
    /// Solve one serialised problem.
    Solve {
        /// Problem bundle directory.
        #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
        problem: Option<PathBuf>,
        /// Instead of reading a bundle, build a synthetic problem with this
        /// many steps and scenarios, e.g. `300x8`.
        #[arg(long, value_parser = parse_size)]
        synthetic: Option<(usize, usize)>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Start from the box midpoints instead of the decoupled minimisers.
        #[arg(long)]
        midpoint_start: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scenario counts needed for a violation level and confidence.
    Bound {
        /// Violation levels (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        eps: Vec<f64>,
        /// Confidence levels (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        beta: Vec<f64>,
        /// Also evaluate the bound when this many samples are discarded.
        #[arg(long)]
        discarded: Option<usize>,
        /// Largest scenario count of the confidence curves.
        #[arg(long, default_value_t = 100)]
        curve_max: usize,
        /// Write bound.csv and curve.csv here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time ADMM iterations over a grid of horizon lengths and scenario counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "250,500,1000")]
        horizons: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "12,24,48")]
        scenario_counts: Vec<usize>,
        /// Timed iterations per grid point.
        #[arg(long, default_value_t = 30)]
        iterations: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Controller {
    Nominal,
    Scenario,
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let (n, m) = s.split_once(['x', 'X']).context("expected <steps>x<scenarios>")?;
    let (n, m) = (n.trim().parse()?, m.trim().parse()?);
    if n == 0 || m == 0 {
        bail!("sizes must be positive");
    }
    Ok((n, m))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.global.resolve()?;
    match cli.command {
        Command::GenData { out, seed, journeys } => commands::gen_data(&cfg, &out, seed, journeys),
        Command::Simulate { db, journey, controller, out, distance_spacing } => {
            commands::simulate(&cfg, &db, &journey, controller, &out, distance_spacing)
        }
        Command::Compare { db, out, journeys, distance_spacing } => {
            commands::compare(&cfg, &db, &out, journeys.as_deref(), distance_spacing)
        }
        Command::Solve { problem, synthetic, seed, midpoint_start, out } => {
            let source = match (problem, synthetic) {
                (Some(p), _) => commands::ProblemSource::Bundle(p),
                (None, Some((n, s))) => commands::ProblemSource::Synthetic { n, s, seed },
                (None, None) => unreachable!("clap requires one source"),
            };
            commands::solve(&cfg, source, midpoint_start, &out)
        }
        Command::Bound { eps, beta, discarded, curve_max, out } => {
            commands::bound(&eps, &beta, discarded, curve_max, out.as_deref())
        }
        Command::Bench { horizons, scenario_counts, iterations, seed, out } => {
            commands::bench(&cfg, &horizons, &scenario_counts, iterations, seed, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::try_parse_from(["smpc", "--epsilon", "0.01", "--scenarios", "5", "bound", "--eps", "0.1", "--beta", "0.9"])
            .unwrap();
        let cfg = cli.global.resolve().unwrap();
        assert_eq!(cfg.admm.epsilon, 0.01);
        assert_eq!(cfg.scenario.max_scenarios, Some(5));
        assert_eq!(cfg.admm.rho1, ExperimentConfig::default().admm.rho1);
    }

    #[test]
    fn invalid_overrides_are_rejected() {
        let cli = Cli::try_parse_from(["smpc", "--rho1=-1", "bound", "--eps", "0.1", "--beta", "0.9"]).unwrap();
        assert!(cli.global.resolve().is_err());
    }

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("300x8").unwrap(), (300, 8));
        assert!(parse_size("300").is_err());
        assert!(parse_size("0x8").is_err());
    }

    #[test]
    fn solve_needs_exactly_one_source() {
        assert!(Cli::try_parse_from(["smpc", "solve", "--out", "o"]).is_err());
        assert!(Cli::try_parse_from(["smpc", "solve", "--out", "o", "--problem", "p", "--synthetic", "3x2"]).is_err());
    }
}
