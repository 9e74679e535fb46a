//! Reference solvers for cross-checking ADMM: exhaustive enumeration over a
//! battery-power grid and a dense log-barrier interior-point method.

use std::time::Instant;

use faer::prelude::SpSolver;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::convex::{ConvexProblem, Solution, SolverStats};
use crate::error::{Error, Result};
use crate::models::{PowertrainParams, StepKinematics};

/// Whole-aircraft drive power from first principles: solve the lift balance
/// for the angle of attack, evaluate drag, and add the rates of change of
/// kinetic and potential energy. MW.
pub fn force_balance_drive_power(m: f64, k: &StepKinematics, p: &PowertrainParams) -> f64 {
    let q = 0.5 * p.air_density * p.wing_area * k.v * k.v;
    let cl = m * (k.v * k.dgamma + p.g_accel * k.gamma.cos()) / q;
    let alpha = (cl - p.b0) / p.b1;
    let cd = p.a2 * alpha * alpha + p.a1 * alpha + p.a0;
    (0.5 * m * k.dv2 + m * p.g_accel * k.gamma.sin() * k.v + cd * q * k.v) * 1e-6
}

pub const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub points_per_step: usize,
    /// Largest admissible `points_per_step^N`.
    pub budget: u64,
}

impl GridSpec {
    pub fn new(points_per_step: usize) -> Self {
        Self { points_per_step, budget: DEFAULT_BUDGET }
    }

    /// Grid spacing at step `i`.
    pub fn spacing(&self, problem: &ConvexProblem, i: usize) -> f64 {
        let b = problem.schedule.steps[i].bounds;
        (b.pb_hi - b.pb_lo) / (self.points_per_step - 1) as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Best {
    fuel: f64,
    /// Grid indices packed lexicographically, for a stable tie-break.
    key: u64,
}

impl Best {
    fn better(self, other: Best) -> Best {
        if other.fuel < self.fuel || (other.fuel == self.fuel && other.key < self.key) {
            other
        } else {
            self
        }
    }
}

struct Enumerator<'a> {
    problem: &'a ConvexProblem,
    grids: Vec<Vec<f64>>,
    k: u64,
}

impl Enumerator<'_> {
    fn dfs(&self, i: usize, m: f64, e: f64, fuel: f64, key: u64, best: &mut Option<Best>) {
        let n = self.grids.len();
        if i == n {
            let cand = Best { fuel, key };
            *best = Some(best.map_or(cand, |b| b.better(cand)));
            return;
        }
        let b = self.problem.schedule.steps[i].bounds;
        let delta = self.problem.delta;
        for (g, &p) in self.grids[i].iter().enumerate() {
            let e_next = e - p * delta;
            if e_next < self.problem.soc.lo || e_next > self.problem.soc.hi {
                continue;
            }
            let Ok(phi) = self.problem.f_phi(i, m, p) else { continue };
            if phi < b.phi_lo || phi > b.phi_hi {
                continue;
            }
            let fuel_next = fuel + phi * delta;
            if best.is_some_and(|bb| fuel_next > bb.fuel) {
                continue;
            }
            self.dfs(i + 1, m - phi * delta, e_next, fuel_next, key * self.k + g as u64, best);
        }
    }
}

/// Minimum-fuel battery sequence over a uniform grid per step, with fuel
/// rate equal to its lower bound.
pub fn brute_force_solve(problem: &ConvexProblem, grid: GridSpec) -> Result<Solution> {
    let started = Instant::now();
    let n = problem.len();
    let k = grid.points_per_step;
    if k < 2 {
        return Err(Error::Precondition("grid needs at least two points per step".into()));
    }
    let total = (k as f64).powi(n as i32);
    if total > grid.budget as f64 {
        return Err(Error::Budget { points: k, steps: n, budget: grid.budget });
    }
    let grids: Vec<Vec<f64>> = problem
        .schedule
        .steps
        .iter()
        .map(|s| {
            let b = s.bounds;
            (0..k).map(|j| b.pb_lo + (b.pb_hi - b.pb_lo) * j as f64 / (k - 1) as f64).collect()
        })
        .collect();
    let en = Enumerator { problem, grids, k: k as u64 };
    let b0 = problem.schedule.steps[0].bounds;
    let best = (0..k)
        .into_par_iter()
        .filter_map(|g| {
            let p = en.grids[0][g];
            let e1 = problem.e0 - p * problem.delta;
            if e1 < problem.soc.lo || e1 > problem.soc.hi {
                return None;
            }
            let phi = problem.f_phi(0, problem.m0, p).ok()?;
            if phi < b0.phi_lo || phi > b0.phi_hi {
                return None;
            }
            let mut best = None;
            en.dfs(1, problem.m0 - phi * problem.delta, e1, phi * problem.delta, g as u64, &mut best);
            best
        })
        .reduce_with(Best::better)
        .ok_or_else(|| Error::Infeasible("no grid sequence satisfies the boxes and SOC window".into()))?;
    let mut idx = vec![0usize; n];
    let mut key = best.key;
    for slot in idx.iter_mut().rev() {
        *slot = (key % k as u64) as usize;
        key /= k as u64;
    }
    let p_b: Vec<f64> = idx.iter().enumerate().map(|(i, &g)| en.grids[i][g]).collect();
    let stats = SolverStats {
        iterations: total as usize,
        converged: true,
        wall_time: started.elapsed().as_secs_f64(),
        ..Default::default()
    };
    let mut sol = problem.solution_from_battery(&p_b, stats)?;
    sol.objective = best.fuel;
    Ok(sol)
}

/// First-order bound on how far the best grid sequence can sit above the
/// continuous optimum: one grid spacing per step times the largest fuel
/// sensitivity to battery power, summed over the horizon.
pub fn grid_resolution_bound(problem: &ConvexProblem, grid: GridSpec, samples: usize) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..problem.len() {
        let b = problem.schedule.steps[i].bounds;
        let h = grid.spacing(problem, i);
        let mut worst: f64 = 0.0;
        for j in 0..=samples {
            let p = b.pb_lo + (b.pb_hi - b.pb_lo) * j as f64 / samples as f64;
            let (_, dp) = problem.f_phi_partials(i, problem.m0, p)?;
            worst = worst.max(dp.abs());
        }
        total += problem.delta * h * worst;
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierOptions {
    pub t0: f64,
    pub growth: f64,
    pub newton_tol: f64,
    pub alpha: f64,
    pub beta: f64,
    pub max_newton: usize,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self { t0: 1.0, growth: 10.0, newton_tol: 1e-10, alpha: 0.3, beta: 0.5, max_newton: 200 }
    }
}

/// Variable layout: fuel rates, then free battery powers, then the phase-1
/// slack if present. Steps whose battery box is a single point are fixed.
struct Layout {
    n: usize,
    pb_var: Vec<Option<usize>>,
    pb_fixed: Vec<f64>,
    slack: Option<usize>,
    nvar: usize,
}

impl Layout {
    fn new(problem: &ConvexProblem, slack: bool) -> Self {
        let n = problem.len();
        let mut next = n;
        let mut pb_var = Vec::with_capacity(n);
        let mut pb_fixed = Vec::with_capacity(n);
        for s in &problem.schedule.steps {
            let b = s.bounds;
            if b.pb_hi - b.pb_lo <= 1e-12 * b.pb_hi.abs().max(1.0) {
                pb_var.push(None);
                pb_fixed.push(0.5 * (b.pb_lo + b.pb_hi));
            } else {
                pb_var.push(Some(next));
                pb_fixed.push(f64::NAN);
                next += 1;
            }
        }
        let slack = slack.then(|| {
            next += 1;
            next - 1
        });
        Self { n, pb_var, pb_fixed, slack, nvar: next }
    }

    fn pb(&self, v: &[f64], i: usize) -> f64 {
        self.pb_var[i].map_or(self.pb_fixed[i], |k| v[k])
    }

    fn s(&self, v: &[f64]) -> f64 {
        self.slack.map_or(0.0, |k| v[k])
    }

    fn n_constraints(&self) -> usize {
        // fuel bound, fuel box (2), battery box (2 per free step), SOC (2)
        self.n * 5 + self.pb_var.iter().filter(|p| p.is_some()).count() * 2
    }
}

/// Barrier value, gradient and Hessian of
/// `t * objective - sum log(s - c_k(v))` (with `s = 0` outside phase 1).
struct Model<'a> {
    problem: &'a ConvexProblem,
    layout: Layout,
}

struct Derivs {
    value: f64,
    grad: Vec<f64>,
    hess: Mat<f64>,
}

impl Model<'_> {
    fn objective(&self, v: &[f64]) -> f64 {
        match self.layout.slack {
            Some(k) => v[k],
            None => v[..self.layout.n].iter().sum::<f64>() * self.problem.delta,
        }
    }

    /// All constraint values `c_k(v) - s`; `None` outside the domain.
    fn slacks(&self, v: &[f64]) -> Option<Vec<f64>> {
        let p = self.problem;
        let l = &self.layout;
        let s = l.s(v);
        let mut out = Vec::with_capacity(l.n_constraints());
        let mut m = p.m0;
        let mut e = p.e0;
        for i in 0..l.n {
            let b = p.schedule.steps[i].bounds;
            let phi = v[i];
            let pb = l.pb(v, i);
            let f = p.f_phi(i, m, pb).ok()?;
            out.push(f - phi - s);
            out.push(b.phi_lo - phi - s);
            out.push(phi - b.phi_hi - s);
            if l.pb_var[i].is_some() {
                out.push(b.pb_lo - pb - s);
                out.push(pb - b.pb_hi - s);
            }
            e -= pb * p.delta;
            out.push(p.soc.lo - e - s);
            out.push(e - p.soc.hi - s);
            m -= phi * p.delta;
        }
        Some(out)
    }

    fn value(&self, v: &[f64], t: f64) -> Option<f64> {
        let c = self.slacks(v)?;
        if c.iter().any(|&x| !(x < 0.0)) {
            return None;
        }
        Some(t * self.objective(v) - c.iter().map(|x| (-x).ln()).sum::<f64>())
    }

    fn derivs(&self, v: &[f64], t: f64) -> Result<Derivs> {
        let p = self.problem;
        let l = &self.layout;
        let n = l.n;
        let delta = p.delta;
        let s = l.s(v);
        let mut grad = vec![0.0; l.nvar];
        let mut hess = Mat::<f64>::zeros(l.nvar, l.nvar);
        let mut value = t * self.objective(v);
        match l.slack {
            Some(k) => grad[k] += t,
            None => grad[..n].iter_mut().for_each(|g| *g += t * delta),
        }

        // running mass and energy
        let mut m = vec![0.0; n];
        let mut e_end = vec![0.0; n];
        let (mut mi, mut ei) = (p.m0, p.e0);
        for i in 0..n {
            m[i] = mi;
            ei -= l.pb(v, i) * delta;
            e_end[i] = ei;
            mi -= v[i] * delta;
        }

        // curvature of fuel constraints shared by all earlier fuel rates
        let mut phi_block_weight = vec![0.0; n];
        // slack cross term weights for the same dense gradients
        let mut slack_phi_weight = vec![0.0; n];

        let add_slack = |hess: &mut Mat<f64>, grad: &mut [f64], var: Option<usize>, dc: f64, q: f64, r: f64| {
            // constraint c - s with gradient dc w.r.t. `var`, -1 w.r.t. s
            if let Some(ks) = l.slack {
                grad[ks] += -r;
                hess[(ks, ks)] += q;
                if let Some(kv) = var {
                    hess[(ks, kv)] += -dc * q;
                    hess[(kv, ks)] += -dc * q;
                }
            }
        };

        for i in 0..n {
            let b = p.schedule.steps[i].bounds;
            let pbv = l.pb_var[i];
            let pb = l.pb(v, i);
            let ev = p.f_phi_eval(i, m[i], pb).map_err(|e| Error::Solver { step: i, message: e.to_string() })?;

            // fuel bound: c = f(m_i, p_i) - phi_i
            let c = ev.value - v[i] - s;
            let (q, r) = (1.0 / (c * c), -1.0 / c);
            value -= (-c).ln();
            let a = -delta * ev.dm; // d c / d phi_l for l < i
            for lidx in 0..i {
                grad[lidx] += r * a;
            }
            grad[i] += -r;
            if let Some(kp) = pbv {
                grad[kp] += r * ev.dp;
            }
            phi_block_weight[i] = q * a * a + r * delta * delta * ev.dmm;
            slack_phi_weight[i] = -a * q;
            for lidx in 0..i {
                hess[(lidx, i)] += -a * q;
                hess[(i, lidx)] += -a * q;
                if let Some(kp) = pbv {
                    let w = q * a * ev.dp + r * (-delta * ev.dmp);
                    hess[(lidx, kp)] += w;
                    hess[(kp, lidx)] += w;
                }
            }
            hess[(i, i)] += q;
            if let Some(kp) = pbv {
                hess[(i, kp)] += -q * ev.dp;
                hess[(kp, i)] += -q * ev.dp;
                hess[(kp, kp)] += q * ev.dp * ev.dp + r * ev.dpp;
            }
            if let Some(ks) = l.slack {
                grad[ks] += -r;
                hess[(ks, ks)] += q;
                hess[(ks, i)] += q;
                hess[(i, ks)] += q;
                if let Some(kp) = pbv {
                    hess[(ks, kp)] += -q * ev.dp;
                    hess[(kp, ks)] += -q * ev.dp;
                }
            }

            // fuel-rate box
            for (c, dc) in [(b.phi_lo - v[i] - s, -1.0), (v[i] - b.phi_hi - s, 1.0)] {
                let (q, r) = (1.0 / (c * c), -1.0 / c);
                value -= (-c).ln();
                grad[i] += r * dc;
                hess[(i, i)] += q;
                add_slack(&mut hess, &mut grad, Some(i), dc, q, r);
            }
            // battery box
            if let Some(kp) = pbv {
                for (c, dc) in [(b.pb_lo - pb - s, -1.0), (pb - b.pb_hi - s, 1.0)] {
                    let (q, r) = (1.0 / (c * c), -1.0 / c);
                    value -= (-c).ln();
                    grad[kp] += r * dc;
                    hess[(kp, kp)] += q;
                    add_slack(&mut hess, &mut grad, Some(kp), dc, q, r);
                }
            }
        }

        // dense fuel-rate block: entry (l, k) collects weights of every
        // constraint i > max(l, k)
        let mut suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            suffix[i] = suffix[i + 1] + phi_block_weight[i];
        }
        for lidx in 0..n {
            for kidx in 0..n {
                hess[(lidx, kidx)] += suffix[lidx.max(kidx) + 1];
            }
        }
        if let Some(ks) = l.slack {
            let mut acc = 0.0;
            for lidx in (0..n).rev() {
                // constraints i > lidx
                let w = acc;
                hess[(ks, lidx)] += w;
                hess[(lidx, ks)] += w;
                acc += slack_phi_weight[lidx];
            }
        }

        // SOC window on end-of-step energy: dE_i / dp_l = -delta for l <= i
        let mut soc_w = vec![0.0; n];
        let mut soc_g = vec![0.0; n];
        let mut soc_slack = vec![0.0; n];
        for i in 0..n {
            for (c, sign) in [(p.soc.lo - e_end[i] - s, 1.0), (e_end[i] - p.soc.hi - s, -1.0)] {
                // d c / d p_l = sign * delta
                let (q, r) = (1.0 / (c * c), -1.0 / c);
                value -= (-c).ln();
                soc_w[i] += q * delta * delta;
                soc_g[i] += r * sign * delta;
                soc_slack[i] += -sign * delta * q;
                if let Some(ks) = l.slack {
                    grad[ks] += -r;
                    hess[(ks, ks)] += q;
                }
            }
        }
        let mut w_suffix = vec![0.0; n + 1];
        let mut g_suffix = vec![0.0; n + 1];
        let mut s_suffix = vec![0.0; n + 1];
        for i in (0..n).rev() {
            w_suffix[i] = w_suffix[i + 1] + soc_w[i];
            g_suffix[i] = g_suffix[i + 1] + soc_g[i];
            s_suffix[i] = s_suffix[i + 1] + soc_slack[i];
        }
        for lidx in 0..n {
            let Some(kl) = l.pb_var[lidx] else { continue };
            grad[kl] += g_suffix[lidx];
            if let Some(ks) = l.slack {
                hess[(ks, kl)] += s_suffix[lidx];
                hess[(kl, ks)] += s_suffix[lidx];
            }
            for kidx in 0..n {
                let Some(kk) = l.pb_var[kidx] else { continue };
                hess[(kl, kk)] += w_suffix[lidx.max(kidx)];
            }
        }
        Ok(Derivs { value, grad, hess })
    }

    /// Centering by damped Newton. Returns the Newton step count.
    fn center(&self, v: &mut Vec<f64>, t: f64, opts: &BarrierOptions, stop_if_negative_slack: bool) -> Result<usize> {
        for it in 0..opts.max_newton {
            let d = self.derivs(v, t)?;
            let chol = match d.hess.cholesky(Side::Lower) {
                Ok(c) => c,
                Err(_) => {
                    return Err(Error::Solver { step: 0, message: "barrier Hessian not positive definite".into() })
                }
            };
            let rhs = Mat::<f64>::from_fn(d.grad.len(), 1, |i, _| -d.grad[i]);
            let dir = chol.solve(&rhs);
            let dir: Vec<f64> = (0..d.grad.len()).map(|i| dir[(i, 0)]).collect();
            let decrement: f64 = -d.grad.iter().zip(&dir).map(|(g, x)| g * x).sum::<f64>();
            if decrement / 2.0 <= opts.newton_tol {
                return Ok(it);
            }
            let mut step = 1.0;
            let trial = loop {
                let cand: Vec<f64> = v.iter().zip(&dir).map(|(x, dx)| x + step * dx).collect();
                if let Some(val) = self.value(&cand, t) {
                    if val <= d.value - opts.alpha * step * decrement {
                        break Some(cand);
                    }
                }
                step *= opts.beta;
                if step < 1e-14 {
                    break None;
                }
            };
            match trial {
                Some(c) => *v = c,
                None => return Ok(it),
            }
            if stop_if_negative_slack && self.layout.s(v) < 0.0 {
                return Ok(it + 1);
            }
        }
        Ok(opts.max_newton)
    }
}

/// Log-barrier interior-point solve in fuel rates and battery powers, with
/// mass and energy eliminated through their recursions. Returns once the
/// barrier duality gap `m / t` is at most `tol * (1 + |objective|)`.
pub fn barrier_solve(problem: &ConvexProblem, tol: f64) -> Result<Solution> {
    barrier_solve_with(problem, tol, &BarrierOptions::default())
}

pub fn barrier_solve_with(problem: &ConvexProblem, tol: f64, opts: &BarrierOptions) -> Result<Solution> {
    let started = Instant::now();
    let start = phase_one(problem, opts)?;
    let model = Model { problem, layout: Layout::new(problem, false) };
    let mut v = start;
    let m = model.layout.n_constraints() as f64;
    let mut t = opts.t0;
    let mut newton = 0;
    loop {
        newton += model.center(&mut v, t, opts, false)?;
        let obj = model.objective(&v);
        let gap = m / t;
        if gap <= tol * (1.0 + obj.abs()) {
            let phi = v[..model.layout.n].to_vec();
            let p_b: Vec<f64> = (0..model.layout.n).map(|i| model.layout.pb(&v, i)).collect();
            let stats = SolverStats {
                iterations: newton,
                primal_residual: 0.0,
                dual_residual: gap,
                converged: true,
                wall_time: started.elapsed().as_secs_f64(),
            };
            return Ok(problem.solution_from_iterates(&phi, &p_b, stats));
        }
        t *= opts.growth;
    }
}

/// Strictly feasible starting point: minimize a common slack on every
/// constraint from the mid-box point until it turns negative.
fn phase_one(problem: &ConvexProblem, opts: &BarrierOptions) -> Result<Vec<f64>> {
    let model = Model { problem, layout: Layout::new(problem, true) };
    let l = &model.layout;
    let mut v = vec![0.0; l.nvar];
    for i in 0..l.n {
        let b = problem.schedule.steps[i].bounds;
        v[i] = 0.5 * (b.phi_lo + b.phi_hi);
        if let Some(k) = l.pb_var[i] {
            v[k] = 0.5 * (b.pb_lo + b.pb_hi);
        }
    }
    let ks = l.slack.expect("phase one has a slack");
    v[ks] = 0.0;
    let worst = model
        .slacks(&v)
        .ok_or_else(|| Error::Infeasible("mid-box start outside the fuel-map domain".into()))?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    v[ks] = worst.max(0.0) + 1.0;
    let m = l.n_constraints() as f64;
    let mut t = opts.t0;
    for _ in 0..40 {
        model.center(&mut v, t, opts, true)?;
        if v[ks] < 0.0 {
            v.truncate(ks);
            return Ok(v);
        }
        if m / t < 1e-9 {
            break;
        }
        t *= opts.growth;
    }
    Err(Error::Infeasible(format!(
        "phase one could not reach strict feasibility (best common slack {:.3e})",
        v[ks]
    )))
}
