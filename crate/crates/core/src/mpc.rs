//! Shrinking-horizon closed loop and baseline strategies.
//!
//! At each step the schedule is rebuilt from the current mass, the program
//! over the remaining mission is solved, and only the first battery-power
//! move is applied to the plant. The plant uses the same models as the
//! predictor.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::admm::{self, SolverOptions};
use crate::convex::{assemble, ConvexProblem, SolverStats};
use crate::error::{Error, Result};
use crate::models::{battery_chemical_power, battery_effective_power, PowertrainParams, Topology};
use crate::schedule::{build_schedule, CoefficientSchedule, FlightProfile, ScheduleOptions, ScheduleStep, Tables};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    AdmmVariableMass,
    AdmmConstantMass,
    Cdcs,
    GasTurbineOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 4] =
        [Strategy::AdmmVariableMass, Strategy::AdmmConstantMass, Strategy::Cdcs, Strategy::GasTurbineOnly];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::AdmmVariableMass => "admm-variable-mass",
            Strategy::AdmmConstantMass => "admm-constant-mass",
            Strategy::Cdcs => "cdcs",
            Strategy::GasTurbineOnly => "gas-turbine-only",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

/// Everything a closed-loop run needs, with tables and profile loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: PowertrainParams,
    pub profile: FlightProfile,
    pub tables: Tables,
    pub strategy: Strategy,
    /// Recovery efficiency on negative-drive steps; `None` disables it.
    pub windmilling: Option<f64>,
    pub schedule: ScheduleOptions,
    pub solver: SolverOptions,
    /// Aircraft take-off mass, kg; defaults to MTOW.
    pub initial_mass: Option<f64>,
    /// Stored energy per system at take-off, MJ; defaults to the SOC ceiling.
    pub initial_energy: Option<f64>,
}

impl Scenario {
    pub fn new(params: PowertrainParams, profile: FlightProfile, tables: Tables, strategy: Strategy) -> Self {
        Self {
            params,
            profile,
            tables,
            strategy,
            windmilling: None,
            schedule: ScheduleOptions::default(),
            solver: SolverOptions::default(),
            initial_mass: None,
            initial_energy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.solver.validate()?;
        if let Some(eta) = self.windmilling {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(Error::Config(format!("windmilling efficiency {eta} outside (0, 1]")));
            }
        }
        if let Some(cap) = self.schedule.gt_power_cap {
            if !(cap > self.params.gt_power_range.lo && cap <= self.params.gt_power_range.hi) {
                return Err(Error::Config(format!("gas turbine cap {cap} MW outside the turbine range")));
            }
        }
        if self.profile.n_steps() == 0 {
            return Err(Error::Config("flight profile has no steps".into()));
        }
        Ok(())
    }

    pub fn m0(&self) -> f64 {
        self.initial_mass.unwrap_or(self.params.mtow)
    }

    pub fn e0(&self) -> f64 {
        self.initial_energy.unwrap_or(self.params.soc_range.hi)
    }

    /// Full-horizon program the first step solves, with the mass frozen for
    /// the constant-mass strategy.
    pub fn opening_problem(&self) -> Result<ConvexProblem> {
        let m0 = self.m0();
        let schedule = self.schedule_from(0, m0)?;
        let mut problem = assemble(&schedule, m0 / self.params.n_systems as f64, self.e0(), schedule.len())?;
        if self.strategy == Strategy::AdmmConstantMass {
            problem.frozen_mass = Some(problem.m0);
        }
        Ok(problem)
    }

    /// Schedule over the remaining profile from step `k` at aircraft mass `m`.
    pub fn schedule_from(&self, k: usize, m: f64) -> Result<CoefficientSchedule> {
        let mut s = build_schedule(&self.profile.tail(k), &self.tables, &self.params, m, self.schedule)?;
        if let Some(eta) = self.windmilling {
            s = apply_windmilling(&s, eta)?;
        }
        Ok(s)
    }
}

/// Component powers of one system, MW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComponentPowers {
    Parallel { p_gt: f64, p_em: f64 },
    Series { p_el: f64, p_c: f64, p_gen: f64, p_gt: f64 },
}

impl ComponentPowers {
    pub fn gas_turbine(&self) -> f64 {
        match *self {
            ComponentPowers::Parallel { p_gt, .. } | ComponentPowers::Series { p_gt, .. } => p_gt,
        }
    }
}

/// Split drive and battery power into the components of the power balance.
pub fn decompose_powers(
    p_drv: f64,
    p_b: f64,
    step: &ScheduleStep,
    topology: Topology,
    params: &PowertrainParams,
) -> Result<ComponentPowers> {
    let p_c = battery_effective_power(p_b, params);
    Ok(match topology {
        Topology::Parallel => {
            let p_em = step.kappa.invert(p_c)?;
            ComponentPowers::Parallel { p_gt: p_drv - p_em, p_em }
        }
        Topology::Series => {
            let p_el = step.kappa.eval_monotone(p_drv);
            let p_gen = p_el - p_c;
            ComponentPowers::Series { p_el, p_c, p_gen, p_gt: step.nu.eval_monotone(p_gen) }
        }
    })
}

/// Pin battery power on negative-drive steps to the recovered power.
pub fn apply_windmilling(schedule: &CoefficientSchedule, efficiency: f64) -> Result<CoefficientSchedule> {
    if !(efficiency > 0.0 && efficiency <= 1.0) {
        return Err(Error::Precondition(format!("windmilling efficiency {efficiency} outside (0, 1]")));
    }
    let mut out = schedule.clone();
    for s in &mut out.steps {
        if s.p_drv_estimate < 0.0 {
            let recovered = s.kappa.eval_monotone(efficiency * s.p_drv_estimate);
            let p = battery_chemical_power(recovered, &schedule.params)?;
            s.bounds.pb_lo = p;
            s.bounds.pb_hi = p;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Aircraft mass at the start of the step, kg.
    pub mass: f64,
    /// Stored energy per system at the start of the step, MJ.
    pub energy: f64,
    /// Fuel rate of one system, kg/s.
    pub fuel_rate: f64,
    pub battery_power: f64,
    pub drive_power: f64,
    pub powers: ComponentPowers,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionResult {
    pub topology: Topology,
    pub strategy: Strategy,
    pub n_systems: usize,
    pub delta: f64,
    pub records: Vec<StepRecord>,
    pub stats: Vec<SolverStats>,
    /// Relaxation gap of each step's solve; zero for rule-based strategies.
    pub relaxation_gaps: Vec<f64>,
    pub final_mass: f64,
    pub final_energy: f64,
}

impl MissionResult {
    /// Fuel burnt by one system, kg.
    pub fn fuel_per_system(&self) -> f64 {
        self.records.iter().map(|r| r.fuel_rate).sum::<f64>() * self.delta
    }

    /// Fuel burnt by the aircraft, kg.
    pub fn fuel_total(&self) -> f64 {
        self.fuel_per_system() * self.n_systems as f64
    }

    pub fn battery_profile(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.battery_power).collect()
    }

    /// Battery-power weighted mean time, s.
    pub fn discharge_centroid(&self) -> f64 {
        let w: f64 = self.records.iter().map(|r| r.battery_power).sum();
        self.records.iter().map(|r| r.t * r.battery_power).sum::<f64>() / w
    }

    pub fn total_iterations(&self) -> usize {
        self.stats.iter().map(|s| s.iterations).sum()
    }

    pub fn csv_header(topology: Topology) -> &'static str {
        match topology {
            Topology::Parallel => {
                "t,mass,energy,fuel_rate,battery_power,drive_power,p_gt,p_em,iterations,converged"
            }
            Topology::Series => {
                "t,mass,energy,fuel_rate,battery_power,drive_power,p_el,p_c,p_gen,p_gt,iterations,converged"
            }
        }
    }

    /// One row per step; powers per system.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::csv_header(self.topology));
        for r in &self.records {
            let comps = match r.powers {
                ComponentPowers::Parallel { p_gt, p_em } => format!("{p_gt},{p_em}"),
                ComponentPowers::Series { p_el, p_c, p_gen, p_gt } => format!("{p_el},{p_c},{p_gen},{p_gt}"),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.t, r.mass, r.energy, r.fuel_rate, r.battery_power, r.drive_power, comps, r.iterations, r.converged
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "strategy: {}\ntopology: {}\nsteps: {}\nfuel_per_system_kg: {:.6}\nfuel_total_kg: {:.6}\nfinal_mass_kg: {:.6}\nfinal_energy_mj: {:.6}\nsolver_iterations: {}\n",
            self.strategy,
            self.topology,
            self.records.len(),
            self.fuel_per_system(),
            self.fuel_total(),
            self.final_mass,
            self.final_energy,
            self.total_iterations()
        )
    }
}

/// Parse a mission CSV written by [`MissionResult::to_csv`].
pub fn parse_mission_csv(text: &str) -> Result<(Topology, Vec<StepRecord>)> {
    let origin = std::path::Path::new("<mission>");
    let perr = |m: String| Error::Parse { path: origin.to_path_buf(), message: m };
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| perr(e.to_string()))?.clone();
    let joined = headers.iter().collect::<Vec<_>>().join(",");
    let topology = [Topology::Parallel, Topology::Series]
        .into_iter()
        .find(|&t| MissionResult::csv_header(t) == joined)
        .ok_or_else(|| perr(format!("unrecognized header `{joined}`")))?;
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let num = |k: usize| -> Result<f64> { rec[k].parse::<f64>().map_err(|e| perr(format!("column {k}: {e}"))) };
        let (powers, next) = match topology {
            Topology::Parallel => (ComponentPowers::Parallel { p_gt: num(6)?, p_em: num(7)? }, 8),
            Topology::Series => (
                ComponentPowers::Series { p_el: num(6)?, p_c: num(7)?, p_gen: num(8)?, p_gt: num(9)? },
                10,
            ),
        };
        records.push(StepRecord {
            t: num(0)?,
            mass: num(1)?,
            energy: num(2)?,
            fuel_rate: num(3)?,
            battery_power: num(4)?,
            drive_power: num(5)?,
            powers,
            iterations: rec[next].parse().map_err(|e| perr(format!("iterations: {e}")))?,
            converged: rec[next + 1].parse().map_err(|e| perr(format!("converged: {e}")))?,
        });
    }
    Ok((topology, records))
}

/// Charge-depleting then charge-sustaining: battery covers as much drive
/// power as the motor allows until the SOC floor, then nothing.
pub fn cdcs_battery_power(step: &ScheduleStep, p_drv: f64, energy: f64, delta: f64, params: &PowertrainParams) -> f64 {
    let b = step.bounds;
    if b.pb_lo == b.pb_hi {
        return b.pb_lo;
    }
    let motor = p_drv.max(0.0).min(params.em_power_range.hi);
    let demand = step.kappa.eval_monotone(motor).min(params.max_effective_power());
    let wanted = battery_chemical_power(demand, params).unwrap_or(params.max_chemical_power());
    let available = (energy - params.soc_range.lo) / delta;
    wanted.min(b.pb_hi).min(available).max(b.pb_lo.min(0.0)).max(0.0)
}

/// Lowest battery power at which the fuel rate stays below its ceiling,
/// found by bisection on the decreasing fuel map.
fn battery_for_fuel_ceiling(
    problem: &crate::convex::ConvexProblem,
    m: f64,
    lo: f64,
    hi: f64,
    ceiling: f64,
) -> Option<f64> {
    let f = |p: f64| problem.f_phi(0, m, p).unwrap_or(f64::INFINITY);
    if f(hi) > ceiling {
        return None;
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if f(mid) > ceiling {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(b)
}

/// Simulate the mission under the scenario's strategy.
pub fn run_closed_loop(scenario: &Scenario) -> Result<MissionResult> {
    scenario.validate()?;
    let params = &scenario.params;
    let n_sys = params.n_systems as f64;
    let delta = scenario.profile.delta;
    let total = scenario.profile.n_steps();
    let soc = params.soc_range;
    let mut mass = scenario.m0();
    let mut energy = scenario.e0();
    let mut records = Vec::with_capacity(total);
    let mut stats = Vec::with_capacity(total);
    let mut gaps = Vec::with_capacity(total);

    for k in 0..total {
        let schedule = scenario.schedule_from(k, mass)?;
        let mut problem = assemble(&schedule, mass / n_sys, energy, schedule.len())?;
        let step = problem.schedule.steps[0];
        let b = step.bounds;
        let share = mass / n_sys;
        let p_drv = step.eta.jet(share).v;

        let (planned, st, gap) = match scenario.strategy {
            Strategy::AdmmVariableMass | Strategy::AdmmConstantMass => {
                if scenario.strategy == Strategy::AdmmConstantMass {
                    problem.frozen_mass = Some(problem.m0);
                }
                let sol = admm::solve(&problem, &scenario.solver).map_err(|e| match e {
                    Error::Solver { message, .. } => Error::Solver { step: k, message },
                    other => other,
                })?;
                if !sol.stats.converged {
                    warn!("step {k}: solver stopped without converging");
                }
                let gap = problem.relaxation_gap(&sol)?;
                (sol.p_b[0], sol.stats, gap)
            }
            Strategy::Cdcs => (
                cdcs_battery_power(&step, p_drv, energy, delta, params),
                SolverStats { converged: true, ..Default::default() },
                0.0,
            ),
            Strategy::GasTurbineOnly => (0.0, SolverStats { converged: true, ..Default::default() }, 0.0),
        };
        problem.frozen_mass = None;

        // keep the applied move inside the box and the SOC window
        let (soc_lo, soc_hi) = ((energy - soc.hi) / delta, (energy - soc.lo) / delta);
        let (lo, hi) = match scenario.strategy {
            Strategy::GasTurbineOnly => (0.0, 0.0),
            _ => (b.pb_lo.max(soc_lo), b.pb_hi.min(soc_hi)),
        };
        if lo > hi + 1e-9 {
            return Err(Error::Invariant(format!(
                "step {k}: no battery power keeps the SOC window (energy {energy} MJ)"
            )));
        }
        let hi = hi.max(lo);
        let mut p_b = planned.clamp(lo, hi);
        let mut phi = problem
            .f_phi(0, share, p_b)
            .map_err(|e| Error::Solver { step: k, message: e.to_string() })?;
        if phi > b.phi_hi {
            // solver tolerance can leave the turbine a hair above its
            // ceiling; nudge battery power up to meet demand exactly
            match battery_for_fuel_ceiling(&problem, share, p_b, hi, b.phi_hi) {
                Some(p) if scenario.strategy != Strategy::GasTurbineOnly => {
                    p_b = p;
                    phi = problem.f_phi(0, share, p_b).map_err(|e| Error::Solver { step: k, message: e.to_string() })?;
                }
                _ => {
                    let capability = params.gt_power_range.hi.min(scenario.schedule.gt_power_cap.unwrap_or(f64::INFINITY))
                        + step.kappa.invert(battery_effective_power(hi, params)).unwrap_or(0.0);
                    return Err(Error::DemandInfeasible { step: k, demand: p_drv, capability });
                }
            }
        }
        let phi = phi.max(b.phi_lo);
        let powers = decompose_powers(p_drv, p_b, &step, params.topology, params)?;
        records.push(StepRecord {
            t: step.t,
            mass,
            energy,
            fuel_rate: phi,
            battery_power: p_b,
            drive_power: p_drv,
            powers,
            iterations: st.iterations,
            converged: st.converged,
        });
        stats.push(st);
        gaps.push(gap);
        mass -= n_sys * phi * delta;
        energy -= p_b * delta;
        if energy < soc.lo - 1e-9 || energy > soc.hi + 1e-9 {
            return Err(Error::Invariant(format!("step {k}: energy {energy} MJ left the SOC window")));
        }
    }
    Ok(MissionResult {
        topology: params.topology,
        strategy: scenario.strategy,
        n_systems: params.n_systems,
        delta,
        records,
        stats,
        relaxation_gaps: gaps,
        final_mass: mass,
        final_energy: energy,
    })
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Percentage saving of `fuel` relative to `baseline`.
pub fn saving_percent(baseline: f64, fuel: f64) -> f64 {
    100.0 * (baseline - fuel) / baseline
}
