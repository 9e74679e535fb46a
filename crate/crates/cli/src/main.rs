use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hems_cli::commands;
use hems_cli::error::{CliError, CliResult};
use hems_cli::scenario::ScenarioFile;
use hems_cli::sweep::Axis;
use hybrid_ems::models::Topology;
use hybrid_ems::mpc::Strategy;

/// Fuel-optimal energy management for hybrid-electric aircraft.
///
/// Exit status: 0 ok, 2 configuration or usage error, 3 solver failure,
/// 4 invariant violation. Errors are reported on stderr as one JSON line.
#[derive(Parser)]
#[command(name = "hems", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file; the reference aircraft and mission when omitted.
    scenario: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fly the mission closed-loop with one strategy.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_topology)]
        topology: Option<Topology>,
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Fuel table for two or more strategies, savings against the first.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Repeat or comma-separate; defaults to the scenario's topology.
        #[arg(long, value_parser = parse_topology, value_delimiter = ',')]
        topology: Vec<Topology>,
        /// Repeat or comma-separate; defaults to cdcs, constant and variable mass.
        #[arg(long, value_parser = parse_strategy, value_delimiter = ',')]
        strategy: Vec<Strategy>,
        /// Worker threads; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Open-loop ADMM against the barrier oracle over one parameter axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// battery_mass, max_altitude, max_tas, eps_rel, F_sigma, N, R, beta1_scale or random.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated; falls back to the scenario's [sweep] values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        #[arg(long, value_parser = parse_topology)]
        topology: Option<Topology>,
        /// Seed for the random axis; overrides the scenario's.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Check a scenario and print it with every default filled in.
    Validate {
        scenario: Option<PathBuf>,
    },
}

fn parse_topology(s: &str) -> Result<Topology, String> {
    s.parse().map_err(|e: hybrid_ems::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: hybrid_ems::Error| e.to_string())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Run { common, topology, strategy } => {
            let mut file = ScenarioFile::load_or_default(common.scenario.as_deref())?;
            if let Some(t) = topology {
                file.params.topology = t;
            }
            if let Some(s) = strategy {
                file.strategy = s;
            }
            let r = commands::run(&file, &common.out)?;
            print!("{}", r.summary());
        }
        Command::Compare { common, topology, strategy, jobs } => {
            let file = ScenarioFile::load_or_default(common.scenario.as_deref())?;
            let topologies = if topology.is_empty() { vec![file.params.topology] } else { topology };
            let strategies = if strategy.is_empty() {
                vec![Strategy::Cdcs, Strategy::AdmmConstantMass, Strategy::AdmmVariableMass]
            } else {
                strategy
            };
            let rows = commands::compare(&file, &strategies, &topologies, jobs, &common.out)?;
            print!("{}", commands::compare_table(&rows));
        }
        Command::Sweep { common, axis, values, topology, seed, jobs } => {
            let mut file = ScenarioFile::load_or_default(common.scenario.as_deref())?;
            if let Some(t) = topology {
                file.params.topology = t;
            }
            let axis: Axis = axis
                .or_else(|| file.sweep.axis.clone())
                .ok_or_else(|| CliError::Usage("sweep needs --axis or a [sweep] axis in the scenario".into()))?
                .parse()?;
            let values = values.unwrap_or_else(|| file.sweep.values.clone());
            let seed = seed.unwrap_or(file.seed);
            let outcome = commands::sweep(&file, axis, &values, seed, jobs, &common.out)?;
            for (r, t) in outcome.rows.iter().zip(&outcome.timings) {
                println!(
                    "{axis} = {}: {} steps, gap {:+.2e}, {} iterations, admm {:.3} s, barrier {:.3} s",
                    r.value, r.steps, r.relative_gap, r.iterations, t.admm_seconds, t.barrier_seconds
                );
            }
            if let Some((ea, eb)) = outcome.exponents {
                println!("wall-time growth exponent: admm {ea:.2}, barrier {eb:.2}");
            }
        }
        Command::Validate { scenario } => {
            let file = ScenarioFile::load_or_default(scenario.as_deref())?;
            print!("{}", commands::validate(&file)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code())
        }
    }
}
