//! The four subcommands. Each writes its artifacts under an output directory
//! and returns what it computed so callers can report it.

use std::fmt::Write as _;
use std::path::Path;

use hybrid_ems::admm::{self, trace_to_csv, TRACE_HEADER};
use hybrid_ems::models::Topology;
use hybrid_ems::mpc::{run_closed_loop, saving_percent, ComponentPowers, MissionResult, Scenario, Strategy};
use hybrid_ems::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::scenario::ScenarioFile;
use crate::svg::{render, Panel, Series};
use crate::sweep::{check_values, loglog_slope, run_sweep, Axis, SweepRow, SweepSettings, TimingRow};
use crate::write_csv;

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| Error::Io { path, source }.into())
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source }.into())
}

fn worker_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")).into())
}

/// Bookkeeping checks on a finished mission.
pub fn check_mission(sc: &Scenario, r: &MissionResult) -> CliResult<()> {
    let soc = sc.params.soc_range;
    let slack = 1e-6 * soc.hi;
    let mut prev = f64::INFINITY;
    for (k, rec) in r.records.iter().enumerate() {
        if !(rec.energy >= soc.lo - slack && rec.energy <= soc.hi + slack) {
            return Err(Error::Invariant(format!("step {k}: energy {} MJ outside the SOC window", rec.energy)).into());
        }
        if !(rec.fuel_rate >= 0.0 && rec.mass <= prev) {
            return Err(Error::Invariant(format!("step {k}: mass increased or fuel rate negative")).into());
        }
        prev = rec.mass;
    }
    let expected = sc.m0() - r.fuel_total();
    if (r.final_mass - expected).abs() > 1e-9 * sc.m0() {
        return Err(Error::Invariant(format!("final mass {} kg, fuel bookkeeping gives {expected} kg", r.final_mass)).into());
    }
    if r.fuel_total() > sc.params.fuel_mass {
        log::warn!("mission burns {:.1} kg, more than the {} kg on board", r.fuel_total(), sc.params.fuel_mass);
    }
    Ok(())
}

fn minutes(r: &MissionResult, f: impl Fn(&hybrid_ems::mpc::StepRecord) -> f64) -> Vec<(f64, f64)> {
    r.records.iter().map(|x| (x.t / 60.0, f(x))).collect()
}

fn power_split_plot(r: &MissionResult) -> String {
    let mut panel = Panel::new(format!("Power split per system ({}, {})", r.topology, r.strategy), "time [min]", "power [MW]")
        .with(Series::staircase("drive", minutes(r, |x| x.drive_power)))
        .with(Series::staircase("battery", minutes(r, |x| x.battery_power)));
    type Component = (&'static str, fn(&ComponentPowers) -> f64);
    let comps: Vec<Component> = match r.topology {
        Topology::Parallel => vec![
            ("gas turbine", |c| c.gas_turbine()),
            ("motor", |c| match c {
                ComponentPowers::Parallel { p_em, .. } => *p_em,
                _ => 0.0,
            }),
        ],
        Topology::Series => vec![
            ("gas turbine", |c| c.gas_turbine()),
            ("generator", |c| match c {
                ComponentPowers::Series { p_gen, .. } => *p_gen,
                _ => 0.0,
            }),
            ("battery bus", |c| match c {
                ComponentPowers::Series { p_c, .. } => *p_c,
                _ => 0.0,
            }),
        ],
    };
    for (name, f) in comps {
        panel = panel.with(Series::staircase(name, minutes(r, |x| f(&x.powers))));
    }
    render(&[panel])
}

fn soc_mass_plot(r: &MissionResult) -> String {
    let end = r.records.last().map_or(0.0, |x| (x.t + r.delta) / 60.0);
    let mut energy = minutes(r, |x| x.energy);
    energy.push((end, r.final_energy));
    let mut mass = minutes(r, |x| x.mass);
    mass.push((end, r.final_mass));
    render(&[
        Panel::new("Stored energy per system", "time [min]", "energy [MJ]").with(Series::line("energy", energy)),
        Panel::new("Aircraft mass", "time [min]", "mass [kg]").with(Series::line("mass", mass)),
    ])
}

/// Closed-loop mission with traces, summary and plots.
pub fn run(file: &ScenarioFile, out: &Path) -> CliResult<MissionResult> {
    let sc = file.resolve()?;
    let result = run_closed_loop(&sc)?;
    ensure_dir(out)?;
    write_file(out, "mission.csv", &result.to_csv())?;

    // iteration trace of the opening full-horizon solve
    let trace = match sc.strategy {
        Strategy::AdmmVariableMass | Strategy::AdmmConstantMass => {
            let mut rows = Vec::new();
            admm::solve_traced(&sc.opening_problem()?, &sc.solver, Some(&mut rows))?;
            trace_to_csv(&rows)
        }
        Strategy::Cdcs | Strategy::GasTurbineOnly => format!("{TRACE_HEADER}\n"),
    };
    write_file(out, "solver_trace.csv", &trace)?;

    let max_gap = result.relaxation_gaps.iter().copied().fold(0.0, f64::max);
    let mut summary = result.summary();
    let _ = writeln!(summary, "sampling_interval_s: {}", result.delta);
    let _ = writeln!(summary, "max_relaxation_gap: {max_gap:e}");
    let _ = writeln!(summary, "unconverged_steps: {}", result.stats.iter().filter(|s| !s.converged).count());
    write_file(out, "summary.txt", &summary)?;
    write_file(out, "power_split.svg", &power_split_plot(&result))?;
    write_file(out, "soc_mass.svg", &soc_mass_plot(&result))?;
    check_mission(&sc, &result)?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub topology: Topology,
    pub strategy: Strategy,
    pub fuel_total_kg: f64,
    pub fuel_per_system_kg: f64,
    /// Against the first-listed strategy of the same topology.
    pub saving_percent: f64,
    pub final_energy_mj: f64,
    pub solver_iterations: usize,
}

pub fn compare_table(rows: &[CompareRow]) -> String {
    let mut s = format!(
        "{:<10} {:<20} {:>14} {:>14} {:>10}\n",
        "topology", "strategy", "fuel [kg]", "per system", "saving"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:<20} {:>14.2} {:>14.2} {:>9.2}%",
            r.topology.to_string(),
            r.strategy.name(),
            r.fuel_total_kg,
            r.fuel_per_system_kg,
            r.saving_percent
        );
    }
    s
}

/// Fuel table over strategies and topologies plus battery-power overlays.
pub fn compare(
    file: &ScenarioFile,
    strategies: &[Strategy],
    topologies: &[Topology],
    jobs: usize,
    out: &Path,
) -> CliResult<Vec<CompareRow>> {
    if strategies.len() < 2 {
        return Err(CliError::Usage("compare needs at least two strategies".into()));
    }
    let cases: Vec<(Topology, Strategy)> =
        topologies.iter().flat_map(|&t| strategies.iter().map(move |&s| (t, s))).collect();
    let results = worker_pool(jobs)?.install(|| {
        cases
            .par_iter()
            .map(|&(t, s)| {
                let mut f = file.clone();
                f.params.topology = t;
                f.strategy = s;
                let sc = f.resolve()?;
                let r = run_closed_loop(&sc)?;
                check_mission(&sc, &r)?;
                Ok(r)
            })
            .collect::<CliResult<Vec<MissionResult>>>()
    })?;

    ensure_dir(out)?;
    let mut rows = Vec::with_capacity(results.len());
    let mut panels = Vec::new();
    for (chunk, &topology) in results.chunks(strategies.len()).zip(topologies) {
        let baseline = chunk[0].fuel_total();
        let mut panel =
            Panel::new(format!("Battery power per system ({topology})"), "time [min]", "battery power [MW]");
        for r in chunk {
            rows.push(CompareRow {
                topology,
                strategy: r.strategy,
                fuel_total_kg: r.fuel_total(),
                fuel_per_system_kg: r.fuel_per_system(),
                saving_percent: saving_percent(baseline, r.fuel_total()),
                final_energy_mj: r.final_energy,
                solver_iterations: r.total_iterations(),
            });
            write_file(out, &format!("mission_{topology}_{}.csv", r.strategy), &r.to_csv())?;
            panel = panel.with(Series::staircase(r.strategy.name(), minutes(r, |x| x.battery_power)));
        }
        panels.push(panel);
    }
    write_file(out, "compare.csv", &write_csv(&rows))?;
    write_file(out, "compare.txt", &compare_table(&rows))?;
    write_file(out, "battery_power.svg", &render(&panels))?;
    Ok(rows)
}

pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub timings: Vec<TimingRow>,
    /// Log-log growth of wall time with horizon length (ADMM, barrier).
    pub exponents: Option<(f64, f64)>,
}

/// One open-loop solve per value with ADMM and the barrier oracle.
pub fn sweep(file: &ScenarioFile, axis: Axis, values: &[f64], seed: u64, jobs: usize, out: &Path) -> CliResult<SweepOutcome> {
    check_values(axis, values)?;
    let base = file.resolve()?;
    let settings = SweepSettings { axis, seed, barrier_tol: file.sweep.barrier_tol, jobs };
    let (rows, timings): (Vec<_>, Vec<_>) = run_sweep(&base, values, settings)?.into_iter().unzip();

    ensure_dir(out)?;
    write_file(out, "sweep.csv", &write_csv(&rows))?;
    write_file(out, "sweep_timing.csv", &write_csv(&timings))?;
    let pts = |f: fn(&SweepRow) -> f64| rows.iter().map(|r| (r.value, f(r))).collect::<Vec<_>>();
    let mut iterations = Panel::new(format!("ADMM iterations against {axis}"), axis.name(), "iterations")
        .with(Series::line("iterations", pts(|r| r.iterations as f64)).with_markers());
    let mut gap = Panel::new(format!("Objective gap to the barrier oracle against {axis}"), axis.name(), "|relative gap|")
        .with(Series::line("gap", pts(|r| r.relative_gap.abs())).with_markers())
        .log_y();
    let (lo, hi) = values.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    if lo > 0.0 && hi / lo >= 100.0 {
        iterations = iterations.log_x();
        gap = gap.log_x();
    }
    write_file(out, "sweep.svg", &render(&[iterations, gap]))?;

    let mut exponents = None;
    if axis == Axis::Horizon {
        let admm_pts: Vec<_> = timings.iter().map(|t| (t.value, t.admm_seconds)).collect();
        let barrier_pts: Vec<_> = timings.iter().map(|t| (t.value, t.barrier_seconds)).collect();
        let ea = loglog_slope(&admm_pts);
        let eb = loglog_slope(&barrier_pts);
        let label = |name: &str, e: Option<f64>| match e {
            Some(e) => format!("{name} (slope {e:.2})"),
            None => name.to_string(),
        };
        write_file(
            out,
            "scaling.svg",
            &render(&[Panel::new("Wall time against horizon length", "N", "wall time [s]")
                .log_log()
                .with(Series::line(label("ADMM", ea), admm_pts).with_markers())
                .with(Series::line(label("barrier", eb), barrier_pts).with_markers())]),
        )?;
        exponents = ea.zip(eb);
    }
    Ok(SweepOutcome { rows, timings, exponents })
}

/// Parse, load data files and check every value; returns the full document
/// with defaults filled in.
pub fn validate(file: &ScenarioFile) -> CliResult<String> {
    file.resolve()?;
    Ok(file.to_toml())
}
