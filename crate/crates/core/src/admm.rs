//! Structure-exploiting ADMM for the convex program.
//!
//! Splitting: `x = (chi, xi, zeta, E, phi)` and `z = (m, p_b)`, with dummy
//! copies `xi` of the fuel rate and `zeta` of battery power. Constraint
//! blocks, numbered as the penalties `sigma_1..sigma_5`:
//!
//! 1. `chi - xi + f_phi(m, p_b) = 0` with `chi >= 0`
//! 2. `m - m0 + Psi xi = 0`
//! 3. `E - E0 + Psi_E zeta = 0`
//! 4. `xi - phi = 0`
//! 5. `zeta - p_b = 0`
//!
//! `Psi` is the strictly lower-triangular cumulative-sum operator scaled by
//! `delta`, so `m` holds start-of-step masses. The energy block uses the
//! inclusive operator `Psi + delta I`, so `E` holds end-of-step energies and
//! the window constraint covers the terminal state too.
//!
//! Multipliers are kept in scaled form (`lambda = y / sigma`) and rescaled
//! whenever a penalty changes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::convex::{trivial_solution, ConvexProblem, Solution, SolverStats};
use crate::error::{Error, Result};

pub const INITIAL_PENALTIES: [f64; 5] = [50.0, 3.69e-7, 6.96e-7, 20.29, 0.83];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub eps_rel: f64,
    pub eps_abs: f64,
    /// Iterations between penalty updates.
    pub f_sigma: usize,
    pub max_iter: usize,
    /// Residual-balance ratio.
    pub mu: f64,
    pub tau_max: f64,
    /// Relative residual level above which penalties may adapt.
    pub gate: f64,
    pub initial_penalties: [f64; 5],
    /// Skip the maximal-battery shortcut.
    pub skip_fast_path: bool,
    pub dual_scale: DualScale,
}

/// Reference magnitude for the relative dual tolerance and the penalty gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DualScale {
    /// `|grad_z b^T y|` only. This vanishes at any optimum with battery power
    /// strictly inside its box, so the relative test degenerates there.
    Multiplier,
    /// `max(|grad_z b^T y|, |grad_z b^T R B x|)`, mirroring the max over
    /// terms in the primal scale.
    #[default]
    Balanced,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_rel: 5e-6,
            eps_abs: 0.0,
            f_sigma: 500,
            max_iter: 100_000,
            mu: 10.0,
            tau_max: 100.0,
            gate: 10.0,
            initial_penalties: INITIAL_PENALTIES,
            skip_fast_path: false,
            dual_scale: DualScale::Balanced,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_rel > 0.0 || self.eps_abs > 0.0) || self.eps_rel < 0.0 || self.eps_abs < 0.0 {
            return Err(Error::InvalidParams("need eps_rel > 0 or eps_abs > 0".into()));
        }
        if self.f_sigma == 0 || self.max_iter == 0 {
            return Err(Error::InvalidParams("f_sigma and max_iter must be at least 1".into()));
        }
        if !(self.mu > 1.0 && self.tau_max > 1.0) {
            return Err(Error::InvalidParams("mu and tau_max must exceed 1".into()));
        }
        if self.initial_penalties.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParams("penalties must be positive".into()));
        }
        Ok(())
    }
}

/// `delta` times the strict (or inclusive) running sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CumulativeOp {
    pub delta: f64,
    pub inclusive: bool,
}

impl CumulativeOp {
    pub fn strict(delta: f64) -> Self {
        Self { delta, inclusive: false }
    }

    pub fn inclusive(delta: f64) -> Self {
        Self { delta, inclusive: true }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        x.iter()
            .map(|&v| {
                if self.inclusive {
                    acc += v;
                    self.delta * acc
                } else {
                    let out = self.delta * acc;
                    acc += v;
                    out
                }
            })
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        let mut acc = 0.0;
        for k in (0..y.len()).rev() {
            if self.inclusive {
                acc += y[k];
                out[k] = self.delta * acc;
            } else {
                out[k] = self.delta * acc;
                acc += y[k];
            }
        }
        out
    }

    /// Dense matrix, row-major.
    pub fn dense(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| if c < r || (self.inclusive && c == r) { self.delta } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

/// Solver for `(a I + b L^T L) x = r` with `L` a cumulative operator.
///
/// `L^T L` is dense, but substituting `y = L x` turns the system into a
/// symmetric positive definite tridiagonal one, since `L^{-1}` is a scaled
/// first difference. The tridiagonal factor is computed once and reused
/// until `a` or `b` change.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSolver {
    a: f64,
    b: f64,
    op: CumulativeOp,
    n: usize,
    /// LDL^T of the tridiagonal system: pivots and unit-lower multipliers.
    pivots: Vec<f64>,
    mults: Vec<f64>,
}

impl GramSolver {
    pub fn new(a: f64, b: f64, op: CumulativeOp, n: usize) -> Self {
        let k = if op.inclusive { n } else { n.saturating_sub(1) };
        let s = a / (op.delta * op.delta);
        let mut pivots = Vec::with_capacity(k);
        let mut mults = Vec::with_capacity(k);
        for i in 0..k {
            let diag = s * if i + 1 < k { 2.0 } else { 1.0 } + b;
            let (d, l) = if i == 0 {
                (diag, 0.0)
            } else {
                let l = -s / pivots[i - 1];
                (diag - l * l * pivots[i - 1], l)
            };
            pivots.push(d);
            mults.push(l);
        }
        Self { a, b, op, n, pivots, mults }
    }

    pub fn matches(&self, a: f64, b: f64, n: usize) -> bool {
        self.a == a && self.b == b && self.n == n
    }

    pub fn solve(&self, r: &[f64]) -> Vec<f64> {
        assert_eq!(r.len(), self.n);
        let k = self.pivots.len();
        let delta = self.op.delta;
        let mut x = vec![0.0; self.n];
        if !self.op.inclusive && self.n > 0 {
            x[self.n - 1] = r[self.n - 1] / self.a;
        }
        if k == 0 {
            return x;
        }
        // right-hand side D^T r / delta over the first k entries
        let mut y: Vec<f64> = (0..k)
            .map(|i| (r[i] - if i + 1 < k { r[i + 1] } else { 0.0 }) / delta)
            .collect();
        for i in 1..k {
            y[i] -= self.mults[i] * y[i - 1];
        }
        for i in 0..k {
            y[i] /= self.pivots[i];
        }
        for i in (0..k - 1).rev() {
            y[i] -= self.mults[i + 1] * y[i + 1];
        }
        let mut prev = 0.0;
        for i in 0..k {
            x[i] = (y[i] - prev) / delta;
            prev = y[i];
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Converged,
    IterationLimit,
    Continue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub chi: Vec<f64>,
    pub xi: Vec<f64>,
    pub zeta: Vec<f64>,
    /// End-of-step energies `E_1..E_N`.
    pub e: Vec<f64>,
    pub phi: Vec<f64>,
    /// Start-of-step mass shares `m_0..m_{N-1}`.
    pub m: Vec<f64>,
    pub p_b: Vec<f64>,
    /// Scaled multipliers, one vector per constraint block.
    pub lambda: [Vec<f64>; 5],
    pub sigma: [f64; 5],
    pub j: usize,
    prev: Option<Box<PrimalX>>,
    xi_solver: Option<GramSolver>,
    zeta_solver: Option<GramSolver>,
    /// Reuse factorizations between penalty changes.
    pub cache: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct PrimalX {
    chi: Vec<f64>,
    xi: Vec<f64>,
    zeta: Vec<f64>,
    e: Vec<f64>,
    phi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Primal residual blocks in constraint order.
    pub r: [Vec<f64>; 5],
    /// Dual residual, `m` part then `p_b` part.
    pub s: Vec<f64>,
    pub r_norm: f64,
    pub s_norm: f64,
    /// `max(|b(z)|, |Bx|, |c|)`.
    pub primal_scale: f64,
    /// `|grad_z b^T y|` with unscaled multipliers `y`.
    pub multiplier_scale: f64,
    /// `|grad_z b^T R B x|`.
    pub iterate_scale: f64,
}

impl Residuals {
    pub fn dual_scale(&self, kind: DualScale) -> f64 {
        match kind {
            DualScale::Multiplier => self.multiplier_scale,
            DualScale::Balanced => self.multiplier_scale.max(self.iterate_scale),
        }
    }

    pub fn block_norm(&self, n: usize) -> f64 {
        norm(&self.r[n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub sigma: [f64; 5],
    pub objective: f64,
}

pub const TRACE_HEADER: &str = "iteration,primal_residual,dual_residual,sigma1,sigma2,sigma3,sigma4,sigma5,objective";

pub fn trace_to_csv(rows: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}\n",
            r.iteration,
            r.primal_residual,
            r.dual_residual,
            r.sigma[0],
            r.sigma[1],
            r.sigma[2],
            r.sigma[3],
            r.sigma[4],
            r.objective
        ));
    }
    out
}

/// Parse a trace written by [`trace_to_csv`].
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let perr = |m: String| Error::Parse { path: "<solver trace>".into(), message: m };
    let mut lines = text.lines();
    if lines.next() != Some(TRACE_HEADER) {
        return Err(perr("unrecognized header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(perr(format!("expected 9 columns, got {}", cols.len())));
            }
            let num = |k: usize| cols[k].parse::<f64>().map_err(|e| perr(format!("column {k}: {e}")));
            Ok(TraceRow {
                iteration: cols[0].parse().map_err(|e| perr(format!("column 0: {e}")))?,
                primal_residual: num(1)?,
                dual_residual: num(2)?,
                sigma: [num(3)?, num(4)?, num(5)?, num(6)?, num(7)?],
                objective: num(8)?,
            })
        })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn norm_all<'a>(blocks: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    blocks.into_iter().map(|b| b.iter().map(|x| x * x).sum::<f64>()).sum::<f64>().sqrt()
}

fn solver_err(step: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Solver { step, message: e.to_string() }
}

pub fn mass_op(problem: &ConvexProblem) -> CumulativeOp {
    CumulativeOp::strict(problem.delta)
}

pub fn energy_op(problem: &ConvexProblem) -> CumulativeOp {
    CumulativeOp::inclusive(problem.delta)
}

fn f_phi_vec(problem: &ConvexProblem, m: &[f64], p_b: &[f64]) -> Result<Vec<f64>> {
    (0..m.len()).map(|i| problem.f_phi(i, m[i], p_b[i]).map_err(solver_err(i))).collect()
}

pub fn init_state(problem: &ConvexProblem, opts: &SolverOptions) -> Result<AdmmState> {
    let n = problem.len();
    let steps = &problem.schedule.steps;
    let p_b: Vec<f64> = steps.iter().map(|s| s.bounds.pb_hi).collect();
    let zeta = p_b.clone();
    let xi: Vec<f64> = steps.iter().map(|s| s.bounds.phi_lo).collect();
    let phi = xi.clone();
    let e: Vec<f64> = energy_op(problem)
        .apply(&zeta)
        .iter()
        .map(|d| (problem.e0 - d).clamp(problem.soc.lo, problem.soc.hi))
        .collect();
    let m: Vec<f64> = mass_op(problem).apply(&xi).iter().map(|d| problem.m0 - d).collect();
    let f = f_phi_vec(problem, &m, &p_b)?;
    let chi = xi.iter().zip(&f).map(|(x, f)| (x - f).max(0.0)).collect();
    Ok(AdmmState {
        chi,
        xi,
        zeta,
        e,
        phi,
        m,
        p_b,
        lambda: std::array::from_fn(|_| vec![0.0; n]),
        sigma: opts.initial_penalties,
        j: 0,
        prev: None,
        xi_solver: None,
        zeta_solver: None,
        cache: true,
    })
}

/// Maximum inner iterations of the scalar minimizations.
const INNER_MAX: usize = 20;
const INNER_TOL: f64 = 1e-10;

/// Root of a nondecreasing-at-the-root derivative on `[lo, hi]`, with the
/// endpoints returned when the derivative does not change sign. `deriv`
/// returns the derivative and its slope.
fn scalar_argmin(mut deriv: impl FnMut(f64) -> Result<(f64, f64)>, x0: f64, lo: f64, hi: f64) -> Result<f64> {
    if hi <= lo {
        return Ok(lo);
    }
    let (d_lo, _) = deriv(lo)?;
    if d_lo >= 0.0 {
        return Ok(lo);
    }
    let (d_hi, _) = deriv(hi)?;
    if d_hi <= 0.0 {
        return Ok(hi);
    }
    newton_bracketed(deriv, x0.clamp(lo, hi), lo, hi)
}

fn newton_bracketed(
    mut deriv: impl FnMut(f64) -> Result<(f64, f64)>,
    mut x: f64,
    mut lo: f64,
    mut hi: f64,
) -> Result<f64> {
    let scale = lo.abs().max(hi.abs()).max(1.0);
    for _ in 0..INNER_MAX {
        let (d, dd) = deriv(x)?;
        if d == 0.0 {
            return Ok(x);
        }
        if d < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let newton = x - d / dd;
        let next = if dd > 0.0 && newton >= lo && newton <= hi { newton } else { 0.5 * (lo + hi) };
        let moved = (next - x).abs();
        x = next;
        if moved <= INNER_TOL * x.abs().max(1.0) || hi - lo <= INNER_TOL * scale {
            return Ok(x);
        }
    }
    Ok(x)
}

/// Unconstrained version: expand a bracket around `x0` first.
fn scalar_argmin_free(mut deriv: impl FnMut(f64) -> Result<(f64, f64)>, x0: f64, width: f64) -> Result<f64> {
    let (d0, _) = deriv(x0)?;
    if d0 == 0.0 {
        return Ok(x0);
    }
    let mut w = width.max(1e-12);
    let (mut lo, mut hi) = (x0, x0);
    for _ in 0..200 {
        if d0 < 0.0 {
            hi = x0 + w;
            if deriv(hi)?.0 > 0.0 {
                break;
            }
            lo = hi;
        } else {
            lo = x0 - w;
            if deriv(lo)?.0 < 0.0 {
                break;
            }
            hi = lo;
        }
        w *= 2.0;
    }
    newton_bracketed(deriv, x0.clamp(lo, hi), lo, hi)
}

fn ensure_solvers(state: &mut AdmmState, problem: &ConvexProblem) {
    let n = problem.len();
    let [s1, s2, s3, s4, s5] = state.sigma;
    let (a_xi, b_xi) = (s1 + s4, s2);
    if !(state.cache && state.xi_solver.as_ref().is_some_and(|g| g.matches(a_xi, b_xi, n))) {
        state.xi_solver = Some(GramSolver::new(a_xi, b_xi, mass_op(problem), n));
    }
    if !(state.cache && state.zeta_solver.as_ref().is_some_and(|g| g.matches(s5, s3, n))) {
        state.zeta_solver = Some(GramSolver::new(s5, s3, energy_op(problem), n));
    }
}

/// One pass of the block updates followed by the multiplier ascent.
pub fn step(state: &mut AdmmState, problem: &ConvexProblem) -> Result<()> {
    let n = problem.len();
    let steps = &problem.schedule.steps;
    let [s1, s2, s3, s4, s5] = state.sigma;
    let psi = mass_op(problem);
    let psi_e = energy_op(problem);
    state.prev = Some(Box::new(PrimalX {
        chi: state.chi.clone(),
        xi: state.xi.clone(),
        zeta: state.zeta.clone(),
        e: state.e.clone(),
        phi: state.phi.clone(),
    }));
    ensure_solvers(state, problem);
    let [l1, l2, l3, l4, l5] = &state.lambda;

    let f = f_phi_vec(problem, &state.m, &state.p_b)?;
    let chi: Vec<f64> = (0..n).map(|i| (state.xi[i] - f[i] - l1[i]).max(0.0)).collect();

    let mass_gap: Vec<f64> = (0..n).map(|i| state.m[i] - problem.m0 + l2[i]).collect();
    let mass_back = psi.apply_transpose(&mass_gap);
    let rhs_xi: Vec<f64> = (0..n)
        .map(|i| {
            -problem.delta + s1 * (chi[i] + f[i] + l1[i]) - s2 * mass_back[i] + s4 * (state.phi[i] - l4[i])
        })
        .collect();
    let xi = state.xi_solver.as_ref().expect("factored").solve(&rhs_xi);

    let energy_gap: Vec<f64> = (0..n).map(|i| state.e[i] - problem.e0 + l3[i]).collect();
    let energy_back = psi_e.apply_transpose(&energy_gap);
    let rhs_zeta: Vec<f64> = (0..n).map(|i| -s3 * energy_back[i] + s5 * (state.p_b[i] - l5[i])).collect();
    let zeta = state.zeta_solver.as_ref().expect("factored").solve(&rhs_zeta);

    let drawn = psi_e.apply(&zeta);
    let e: Vec<f64> = (0..n)
        .map(|i| (problem.e0 - drawn[i] - l3[i]).clamp(problem.soc.lo, problem.soc.hi))
        .collect();

    let mut p_b = vec![0.0; n];
    for i in 0..n {
        let a = chi[i] - xi[i] + l1[i];
        let c = zeta[i] + l5[i];
        let mi = state.m[i];
        let b = steps[i].bounds;
        p_b[i] = scalar_argmin(
            |p| {
                let ev = problem.f_phi_eval(i, mi, p).map_err(solver_err(i))?;
                let d = s1 * (a + ev.value) * ev.dp - s5 * (c - p);
                let dd = s1 * (ev.dp * ev.dp + (a + ev.value) * ev.dpp) + s5;
                Ok((d, dd))
            },
            state.p_b[i],
            b.pb_lo,
            b.pb_hi,
        )?;
    }

    let phi: Vec<f64> = (0..n)
        .map(|i| {
            let b = steps[i].bounds;
            (xi[i] + l4[i]).clamp(b.phi_lo, b.phi_hi)
        })
        .collect();

    let burnt = psi.apply(&xi);
    let mut m = vec![0.0; n];
    for i in 0..n {
        let a = chi[i] - xi[i] + l1[i];
        let target = problem.m0 - burnt[i] - l2[i];
        let pi = p_b[i];
        m[i] = scalar_argmin_free(
            |mm| {
                let ev = problem.f_phi_eval(i, mm, pi).map_err(solver_err(i))?;
                let d = s1 * (a + ev.value) * ev.dm + s2 * (mm - target);
                let dd = s1 * (ev.dm * ev.dm + (a + ev.value) * ev.dmm) + s2;
                Ok((d, dd))
            },
            state.m[i],
            1.0,
        )?;
    }

    let f_new = f_phi_vec(problem, &m, &p_b)?;
    let [l1, l2, l3, l4, l5] = &mut state.lambda;
    for i in 0..n {
        l1[i] += chi[i] - xi[i] + f_new[i];
        l2[i] += m[i] - problem.m0 + burnt[i];
        l3[i] += e[i] - problem.e0 + drawn[i];
        l4[i] += xi[i] - phi[i];
        l5[i] += zeta[i] - p_b[i];
    }
    state.chi = chi;
    state.xi = xi;
    state.zeta = zeta;
    state.e = e;
    state.phi = phi;
    state.m = m;
    state.p_b = p_b;
    state.j += 1;
    Ok(())
}

/// Primal and dual residuals of the current iterate.
pub fn residuals(state: &AdmmState, problem: &ConvexProblem) -> Result<Residuals> {
    let n = problem.len();
    let psi = mass_op(problem);
    let psi_e = energy_op(problem);
    let [s1, s2, s3, s4, s5] = state.sigma;
    let _ = (s3, s4);
    let mut f = Vec::with_capacity(n);
    let mut fm = Vec::with_capacity(n);
    let mut fp = Vec::with_capacity(n);
    for i in 0..n {
        let ev = problem.f_phi_eval(i, state.m[i], state.p_b[i]).map_err(solver_err(i))?;
        f.push(ev.value);
        fm.push(ev.dm);
        fp.push(ev.dp);
    }
    let burnt = psi.apply(&state.xi);
    let drawn = psi_e.apply(&state.zeta);

    // B x blocks, b(z) blocks and c blocks in constraint order
    let bx: [Vec<f64>; 5] = [
        (0..n).map(|i| state.chi[i] - state.xi[i]).collect(),
        burnt.clone(),
        (0..n).map(|i| state.e[i] + drawn[i]).collect(),
        (0..n).map(|i| state.xi[i] - state.phi[i]).collect(),
        state.zeta.clone(),
    ];
    let neg_pb: Vec<f64> = state.p_b.iter().map(|p| -p).collect();
    let zeros = vec![0.0; n];
    let bz: [&[f64]; 5] = [&f, &state.m, &zeros, &zeros, &neg_pb];
    let c: [Vec<f64>; 5] = [zeros.clone(), vec![problem.m0; n], vec![problem.e0; n], zeros.clone(), zeros.clone()];
    let r: [Vec<f64>; 5] =
        std::array::from_fn(|k| (0..n).map(|i| bz[k][i] + bx[k][i] - c[k][i]).collect());

    let mut s = vec![0.0; 2 * n];
    if let Some(prev) = &state.prev {
        let d_chi_xi: Vec<f64> =
            (0..n).map(|i| (prev.chi[i] - state.chi[i]) - (prev.xi[i] - state.xi[i])).collect();
        let d_xi: Vec<f64> = (0..n).map(|i| prev.xi[i] - state.xi[i]).collect();
        let d_burnt = psi.apply(&d_xi);
        for i in 0..n {
            s[i] = s1 * fm[i] * d_chi_xi[i] + s2 * d_burnt[i];
            s[n + i] = s1 * fp[i] * d_chi_xi[i] - s5 * (prev.zeta[i] - state.zeta[i]);
        }
    }
    let chi_xi: Vec<f64> = (0..n).map(|i| state.chi[i] - state.xi[i]).collect();
    let iterate_vec: Vec<f64> = (0..n)
        .map(|i| s1 * fm[i] * chi_xi[i] + s2 * burnt[i])
        .chain((0..n).map(|i| s1 * fp[i] * chi_xi[i] - s5 * state.zeta[i]))
        .collect();
    let [l1, l2, _, _, l5] = &state.lambda;
    let dual_vec: Vec<f64> = (0..n)
        .map(|i| s1 * l1[i] * fm[i] + s2 * l2[i])
        .chain((0..n).map(|i| s1 * l1[i] * fp[i] - s5 * l5[i]))
        .collect();

    let primal_scale = norm_all(bz.iter().copied())
        .max(norm_all(bx.iter().map(|v| v.as_slice())))
        .max(norm_all(c.iter().map(|v| v.as_slice())));
    Ok(Residuals {
        r_norm: norm_all(r.iter().map(|v| v.as_slice())),
        s_norm: norm(&s),
        r,
        s,
        primal_scale,
        multiplier_scale: norm(&dual_vec),
        iterate_scale: norm(&iterate_vec),
    })
}

/// Residual-balancing penalty update; returns whether any penalty changed.
pub fn update_penalties(state: &mut AdmmState, res: &Residuals, opts: &SolverOptions) -> bool {
    if state.j == 0 || !state.j.is_multiple_of(opts.f_sigma) {
        return false;
    }
    let rel_p = res.r_norm / res.primal_scale;
    let rel_d = res.s_norm / res.dual_scale(opts.dual_scale);
    let rel = if rel_p.is_nan() { rel_d } else if rel_d.is_nan() { rel_p } else { rel_p.max(rel_d) };
    if !(rel > opts.gate) {
        return false;
    }
    let gamma = (res.r_norm / res.s_norm).sqrt();
    let tau = if (1.0..opts.tau_max).contains(&gamma) {
        gamma
    } else if gamma > 1.0 / opts.tau_max && gamma < 1.0 {
        1.0 / gamma
    } else {
        opts.tau_max
    };
    let mut changed = false;
    for k in 0..5 {
        let rk = res.block_norm(k);
        let factor = if rk > opts.mu * res.s_norm {
            tau
        } else if res.s_norm > opts.mu * rk {
            1.0 / tau
        } else {
            continue;
        };
        state.sigma[k] *= factor;
        for l in &mut state.lambda[k] {
            *l /= factor;
        }
        changed = true;
    }
    changed
}

pub fn check_stop(res: &Residuals, state: &AdmmState, opts: &SolverOptions) -> StopDecision {
    let n = state.m.len() as f64;
    let eps_p = (5.0 * n).sqrt() * opts.eps_abs + opts.eps_rel * res.primal_scale;
    let eps_d = (2.0 * n).sqrt() * opts.eps_abs + opts.eps_rel * res.dual_scale(opts.dual_scale);
    if res.r_norm <= eps_p && res.s_norm <= eps_d {
        StopDecision::Converged
    } else if state.j > opts.max_iter {
        StopDecision::IterationLimit
    } else {
        StopDecision::Continue
    }
}

/// Solve, recording one trace row per iteration when `trace` is given.
pub fn solve_traced(
    problem: &ConvexProblem,
    opts: &SolverOptions,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Solution> {
    opts.validate()?;
    let started = Instant::now();
    if !opts.skip_fast_path {
        if let Some(mut sol) = trivial_solution(problem)? {
            sol.stats.wall_time = started.elapsed().as_secs_f64();
            return Ok(sol);
        }
    }
    let mut state = init_state(problem, opts)?;
    loop {
        step(&mut state, problem)?;
        let res = residuals(&state, problem)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRow {
                iteration: state.j,
                primal_residual: res.r_norm,
                dual_residual: res.s_norm,
                sigma: state.sigma,
                objective: state.phi.iter().sum::<f64>() * problem.delta,
            });
        }
        let decision = check_stop(&res, &state, opts);
        if decision != StopDecision::Continue {
            let stats = SolverStats {
                iterations: state.j,
                primal_residual: res.r_norm,
                dual_residual: res.s_norm,
                converged: decision == StopDecision::Converged,
                wall_time: started.elapsed().as_secs_f64(),
            };
            if !stats.converged {
                log::warn!("ADMM stopped at the iteration limit with |r| = {:.3e}, |s| = {:.3e}", res.r_norm, res.s_norm);
            }
            return Ok(problem.solution_from_iterates(&state.phi, &state.p_b, stats));
        }
        update_penalties(&mut state, &res, opts);
    }
}

pub fn solve(problem: &ConvexProblem, opts: &SolverOptions) -> Result<Solution> {
    solve_traced(problem, opts, None)
}
