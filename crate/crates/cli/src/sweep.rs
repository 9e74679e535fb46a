//! Parameter sweeps of the open-loop program against the barrier reference.
//!
//! Each point perturbs the scenario along one axis, builds the full-horizon
//! program at take-off and solves it twice: ADMM and the log-barrier oracle.
//! Points run on a worker pool and are merged by sorted axis value. Timings
//! go to a separate table so the results table stays byte-identical between
//! reruns.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use hybrid_ems::admm;
use hybrid_ems::convex::ConvexProblem;
use hybrid_ems::mpc::{Scenario, Strategy};
use hybrid_ems::oracle::barrier_solve;
use hybrid_ems::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    BatteryMass,
    MaxAltitude,
    MaxTas,
    EpsRel,
    FSigma,
    Horizon,
    Resistance,
    Beta1Scale,
    /// Values are draw indices; each draws battery mass, peak altitude and
    /// peak airspeed from the seeded generator.
    Random,
}

impl Axis {
    pub const ALL: [Axis; 9] = [
        Axis::BatteryMass,
        Axis::MaxAltitude,
        Axis::MaxTas,
        Axis::EpsRel,
        Axis::FSigma,
        Axis::Horizon,
        Axis::Resistance,
        Axis::Beta1Scale,
        Axis::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::BatteryMass => "battery_mass",
            Axis::MaxAltitude => "max_altitude",
            Axis::MaxTas => "max_tas",
            Axis::EpsRel => "eps_rel",
            Axis::FSigma => "F_sigma",
            Axis::Horizon => "N",
            Axis::Resistance => "R",
            Axis::Beta1Scale => "beta1_scale",
            Axis::Random => "random",
        }
    }

    fn integral(self) -> bool {
        matches!(self, Axis::FSigma | Axis::Horizon | Axis::Random)
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Axis {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Axis::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<_> = Axis::ALL.iter().map(|a| a.name()).collect();
            CliError::Usage(format!("unknown sweep axis `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub steps: usize,
    /// Fuel burnt by one system over the horizon, kg.
    pub admm_objective: f64,
    pub barrier_objective: f64,
    /// Signed, relative to the barrier objective.
    pub relative_gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub axis: String,
    pub value: f64,
    pub admm_seconds: f64,
    pub barrier_seconds: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SweepSettings {
    pub axis: Axis,
    pub seed: u64,
    pub barrier_tol: f64,
    /// Worker threads; zero picks one per core.
    pub jobs: usize,
}

pub fn check_values(axis: Axis, values: &[f64]) -> CliResult<()> {
    if values.is_empty() {
        return Err(CliError::Usage(format!("sweep over `{axis}` needs at least one value")));
    }
    for &v in values {
        if !v.is_finite() || (axis != Axis::Random && v <= 0.0) || v < 0.0 {
            return Err(CliError::Usage(format!("`{axis}` value {v} must be positive")));
        }
        if axis.integral() && (v.fract() != 0.0 || (axis != Axis::Random && v < 1.0)) {
            return Err(CliError::Usage(format!("`{axis}` value {v} must be a positive integer")));
        }
    }
    Ok(())
}

/// Scenario and solver settings for one sweep point.
pub fn perturb(base: &Scenario, axis: Axis, value: f64, seed: u64) -> CliResult<Scenario> {
    let mut sc = base.clone();
    // the barrier oracle models the mass-coupled program only
    sc.strategy = Strategy::AdmmVariableMass;
    match axis {
        Axis::BatteryMass => sc.params = sc.params.with_battery_mass(value),
        Axis::MaxAltitude => sc.profile = sc.profile.with_max_altitude(value)?,
        Axis::MaxTas => sc.profile = sc.profile.with_max_speed(value)?,
        Axis::EpsRel => sc.solver.eps_rel = value,
        Axis::FSigma => sc.solver.f_sigma = value as usize,
        Axis::Horizon => {
            let n = value as usize;
            let samples = sc.profile.samples();
            let span = samples[samples.len() - 1].t - samples[0].t;
            sc.profile = sc.profile.resample(span / n as f64)?;
            if sc.profile.n_steps() != n {
                return Err(Error::Config(format!(
                    "profile span {span} s does not divide into {n} steps (got {})",
                    sc.profile.n_steps()
                ))
                .into());
            }
        }
        Axis::Resistance => sc.params.battery_resistance = value,
        Axis::Beta1Scale => sc.tables.losses.scale_fuel_slope(value),
        Axis::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(value as u64));
            sc.params = sc.params.with_battery_mass(rng.gen_range(4000.0..12000.0));
            sc.profile = sc
                .profile
                .with_max_altitude(rng.gen_range(5000.0..11000.0))?
                .with_max_speed(rng.gen_range(170.0..220.0))?;
        }
    }
    sc.validate()?;
    Ok(sc)
}

fn solve_point(problem: &ConvexProblem, sc: &Scenario, axis: Axis, value: f64, tol: f64) -> CliResult<(SweepRow, TimingRow)> {
    let t = Instant::now();
    let admm_sol = admm::solve(problem, &sc.solver)?;
    let admm_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let barrier = barrier_solve(problem, tol)?;
    let barrier_seconds = t.elapsed().as_secs_f64();
    let row = SweepRow {
        axis: axis.name().into(),
        value,
        steps: problem.len(),
        admm_objective: admm_sol.objective,
        barrier_objective: barrier.objective,
        relative_gap: (admm_sol.objective - barrier.objective) / barrier.objective.abs(),
        iterations: admm_sol.stats.iterations,
        converged: admm_sol.stats.converged,
    };
    let timing = TimingRow { axis: axis.name().into(), value, admm_seconds, barrier_seconds };
    Ok((row, timing))
}

/// Run every point and return rows sorted by axis value.
pub fn run_sweep(base: &Scenario, values: &[f64], settings: SweepSettings) -> CliResult<Vec<(SweepRow, TimingRow)>> {
    check_values(settings.axis, values)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let mut rows = pool.install(|| {
        values
            .par_iter()
            .map(|&v| {
                let sc = perturb(base, settings.axis, v, settings.seed)?;
                let problem = sc.opening_problem()?;
                log::info!("sweep {} = {v}: {} steps", settings.axis, problem.len());
                solve_point(&problem, &sc, settings.axis, v, settings.barrier_tol)
            })
            .collect::<CliResult<Vec<_>>>()
    })?;
    rows.sort_by(|a, b| a.0.value.total_cmp(&b.0.value));
    Ok(rows)
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
