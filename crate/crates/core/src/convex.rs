//! The unified convex program over one (shrinking) horizon.
//!
//! Decision variables per step are fuel rate `phi`, battery chemical power
//! `p_b`, mass `m` and stored energy `E`. Fuel rate is bounded below by a
//! convex function of `(m, p_b)`; at the optimum the bound is active.
//!
//! Mass is expressed in the per-system frame: `m` is the aircraft mass
//! divided by the number of propulsion systems, so one system's fuel burn
//! lowers it by `phi * delta` exactly. Derivatives with respect to `m` are
//! therefore `n` times those with respect to whole-aircraft mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{battery_effective_jet, Jet, Range, Topology};
use crate::schedule::CoefficientSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProblem {
    pub delta: f64,
    /// Initial mass share, kg.
    pub m0: f64,
    /// Initial stored energy per system, MJ.
    pub e0: f64,
    pub soc: Range,
    pub schedule: CoefficientSchedule,
    pub topology: Topology,
    /// When set, every step sees this mass instead of the decision variable.
    pub frozen_mass: Option<f64>,
}

/// Fuel-rate lower bound and its derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiEval {
    pub value: f64,
    pub dm: f64,
    pub dp: f64,
    pub dmm: f64,
    pub dpp: f64,
    pub dmp: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub phi: Vec<f64>,
    pub p_b: Vec<f64>,
    /// Mass share at the start of each step.
    pub m: Vec<f64>,
    /// Stored energy at the start of each step.
    pub e: Vec<f64>,
    /// Fuel burnt by one system over the horizon, kg.
    pub objective: f64,
    pub stats: SolverStats,
}

impl ConvexProblem {
    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    fn mass_jet(&self, i: usize, m: f64) -> Jet {
        let eta = &self.schedule.steps[i].eta;
        match self.frozen_mass {
            Some(mf) => Jet::constant(eta.jet(mf).v),
            None => eta.jet(m),
        }
    }

    /// Split `f_phi = F(B(m) - W(p_b))` into outer map jet input pieces:
    /// returns `(B jet in m, W jet in p_b)`.
    fn inner_jets(&self, i: usize, m: f64, p_b: f64) -> Result<(Jet, Jet)> {
        let s = &self.schedule.steps[i];
        let params = &self.schedule.params;
        let drive = self.mass_jet(i, m);
        let p_c = battery_effective_jet(p_b, params);
        match self.topology {
            Topology::Parallel => {
                let to_motor = s.kappa.inverse_jet(p_c.v).map_err(|_| Error::Domain {
                    what: "f_phi: motor inverse",
                    value: p_b,
                    lo: s.bounds.pb_lo,
                    hi: s.bounds.pb_hi,
                })?;
                Ok((drive, p_c.compose(to_motor)))
            }
            Topology::Series => {
                let electric = drive.compose(s.kappa.jet_monotone(drive.v));
                Ok((electric, p_c))
            }
        }
    }

    /// Outer map of the composition: fuel map (parallel) or fuel map after
    /// generator map (series).
    fn outer_jet(&self, i: usize, x: f64) -> Jet {
        let s = &self.schedule.steps[i];
        match self.topology {
            Topology::Parallel => s.beta.jet_monotone(x),
            Topology::Series => {
                let gen = s.nu.jet_monotone(x);
                gen.compose(s.beta.jet_monotone(gen.v))
            }
        }
    }

    /// Lower bound on fuel rate at step `i`, kg/s.
    pub fn f_phi(&self, i: usize, m: f64, p_b: f64) -> Result<f64> {
        let (b, w) = self.inner_jets(i, m, p_b)?;
        Ok(self.outer_jet(i, b.v - w.v).v)
    }

    pub fn f_phi_eval(&self, i: usize, m: f64, p_b: f64) -> Result<PhiEval> {
        let (b, w) = self.inner_jets(i, m, p_b)?;
        let f = self.outer_jet(i, b.v - w.v);
        Ok(PhiEval {
            value: f.v,
            dm: f.d1 * b.d1,
            dp: -f.d1 * w.d1,
            dmm: f.d2 * b.d1 * b.d1 + f.d1 * b.d2,
            dpp: f.d2 * w.d1 * w.d1 - f.d1 * w.d2,
            dmp: -f.d2 * b.d1 * w.d1,
        })
    }

    /// `(d phi / d m, d phi / d p_b)`.
    pub fn f_phi_partials(&self, i: usize, m: f64, p_b: f64) -> Result<(f64, f64)> {
        let e = self.f_phi_eval(i, m, p_b)?;
        Ok((e.dm, e.dp))
    }

    /// Mass and energy trajectories (start-of-step values) under `phi`, `p_b`.
    pub fn simulate(&self, phi: &[f64], p_b: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut m = Vec::with_capacity(phi.len());
        let mut e = Vec::with_capacity(p_b.len());
        let (mut mi, mut ei) = (self.m0, self.e0);
        for (&f, &p) in phi.iter().zip(p_b) {
            m.push(mi);
            e.push(ei);
            mi -= f * self.delta;
            ei -= p * self.delta;
        }
        (m, e)
    }

    /// Solution with the fuel-rate bound active wherever the box allows it.
    pub fn solution_from_battery(&self, p_b: &[f64], stats: SolverStats) -> Result<Solution> {
        let n = self.len();
        let mut phi = Vec::with_capacity(n);
        let mut m = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let (mut mi, mut ei) = (self.m0, self.e0);
        for (i, &p) in p_b.iter().enumerate() {
            let b = self.schedule.steps[i].bounds;
            let f = self.f_phi(i, mi, p)?.max(b.phi_lo);
            m.push(mi);
            e.push(ei);
            phi.push(f);
            mi -= f * self.delta;
            ei -= p * self.delta;
        }
        let objective = phi.iter().sum::<f64>() * self.delta;
        Ok(Solution { phi, p_b: p_b.to_vec(), m, e, objective, stats })
    }

    /// Rebuild a solution from solver iterates, recomputing `m` and `E`
    /// through the recursions.
    pub fn solution_from_iterates(&self, phi: &[f64], p_b: &[f64], stats: SolverStats) -> Solution {
        let (m, e) = self.simulate(phi, p_b);
        let objective = phi.iter().sum::<f64>() * self.delta;
        Solution { phi: phi.to_vec(), p_b: p_b.to_vec(), m, e, objective, stats }
    }

    /// Largest relative slack `(phi_i - f_phi_i) / phi_hi_i` of the relaxed
    /// inequality; zero means the relaxation is tight everywhere.
    pub fn relaxation_gap(&self, sol: &Solution) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.len() {
            let f = self.f_phi(i, sol.m[i], sol.p_b[i])?;
            let hi = self.schedule.steps[i].bounds.phi_hi;
            worst = worst.max((sol.phi[i] - f) / hi);
        }
        Ok(worst.max(0.0))
    }

    /// Stored energy after the last step.
    pub fn terminal_energy(&self, sol: &Solution) -> f64 {
        self.e0 - sol.p_b.iter().sum::<f64>() * self.delta
    }
}

/// Maximal battery use is optimal whenever it never leaves the SOC window.
pub fn trivial_solution(problem: &ConvexProblem) -> Result<Option<Solution>> {
    let mut e = problem.e0;
    let mut p_b = Vec::with_capacity(problem.len());
    for s in &problem.schedule.steps {
        e -= s.bounds.pb_hi * problem.delta;
        if e < problem.soc.lo || e > problem.soc.hi {
            return Ok(None);
        }
        p_b.push(s.bounds.pb_hi);
    }
    problem.solution_from_battery(&p_b, SolverStats { converged: true, ..Default::default() }).map(Some)
}

/// Problem over the first `n` steps of `schedule`, starting from mass share
/// `m0` and stored energy `e0`.
pub fn assemble(schedule: &CoefficientSchedule, m0: f64, e0: f64, n: usize) -> Result<ConvexProblem> {
    if n == 0 {
        return Err(Error::Precondition("horizon must contain at least one step".into()));
    }
    if n > schedule.len() {
        return Err(Error::Dimension(format!("horizon {n} exceeds schedule length {}", schedule.len())));
    }
    let params = &schedule.params;
    let soc = params.soc_range;
    if !(soc.lo <= e0 + 1e-9 && e0 <= soc.hi + 1e-9) {
        return Err(Error::Precondition(format!(
            "initial energy {e0} MJ outside [{}, {}]",
            soc.lo, soc.hi
        )));
    }
    let mut sched = schedule.clone();
    sched.truncate(n);
    let worst_burn: f64 = sched.steps.iter().map(|s| s.bounds.phi_hi).sum::<f64>() * schedule.delta;
    if !(m0 - worst_burn > 0.0) {
        return Err(Error::Precondition(format!(
            "mass share {m0} kg could reach zero (worst-case burn {worst_burn} kg)"
        )));
    }
    Ok(ConvexProblem {
        delta: schedule.delta,
        m0,
        e0: e0.clamp(soc.lo, soc.hi),
        soc,
        topology: schedule.topology,
        schedule: sched,
        frozen_mass: None,
    })
}

/// First `n` steps of the shipped mission at MTOW with a full battery,
/// using the shipped tables and default parameters for `topology`.
pub fn default_mission_problem(topology: Topology, n: usize) -> Result<ConvexProblem> {
    let params = crate::models::PowertrainParams { topology, ..Default::default() };
    let profile = crate::schedule::default_profile(60.0)?;
    let schedule = crate::schedule::build_schedule(
        &profile,
        &crate::schedule::Tables::default(),
        &params,
        params.mtow,
        crate::schedule::ScheduleOptions::default(),
    )?;
    assemble(&schedule, params.mass_share(params.mtow), params.soc_range.hi, n)
}

/// Randomized variant of the shipped mission: battery mass, peak altitude
/// and peak airspeed drawn uniformly around the defaults, as in the
/// robustness studies. Returns the full-horizon problem at MTOW with a full
/// battery.
pub fn random_mission_problem<R: rand::Rng>(rng: &mut R, topology: Topology) -> Result<ConvexProblem> {
    let base = crate::models::PowertrainParams { topology, ..Default::default() };
    let params = base.with_battery_mass(rng.gen_range(4000.0..12000.0));
    let profile = crate::schedule::default_profile(60.0)?
        .with_max_altitude(rng.gen_range(5000.0..11000.0))?
        .with_max_speed(rng.gen_range(170.0..220.0))?;
    let schedule = crate::schedule::build_schedule(
        &profile,
        &crate::schedule::Tables::default(),
        &params,
        params.mtow,
        crate::schedule::ScheduleOptions::default(),
    )?;
    assemble(&schedule, params.mass_share(params.mtow), params.soc_range.hi, schedule.len())
}
