//! Physical component models.
//!
//! Units throughout the crate: power in MW, energy in MJ, mass in kg, time in
//! s. With these, a fuel-map slope in kg/MJ multiplies MW directly into kg/s.
//!
//! Aerodynamic coefficients are tabulated per degree, so the angle of attack
//! is carried in degrees while flight-path angles stay in radians for the
//! trigonometry. The drive-power coefficients only ever see the ratios
//! `a1/b1`, `a2/b1^2` and `b0`, which are invariant under a change of angle
//! unit, so the same formulas hold with per-radian coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed on square-root radicands before a domain error.
const RADICAND_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Parallel,
    Series,
}

impl std::fmt::Display for Topology {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Topology::Parallel => f.write_str("parallel"),
            Topology::Series => f.write_str("series"),
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "parallel" => Ok(Topology::Parallel),
            "series" => Ok(Topology::Series),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Aircraft and powertrain constants. Defaults are the BAe 146-class values
/// of the reference study. Power ranges and the SOC window are per
/// propulsion system; masses are whole-aircraft.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowertrainParams {
    /// Maximum take-off mass, kg.
    pub mtow: f64,
    /// m/s^2
    pub g_accel: f64,
    /// m^2
    pub wing_area: f64,
    /// kg/m^3, held constant at all altitudes.
    pub air_density: f64,
    /// Lift coefficient offset (-).
    pub b0: f64,
    /// Lift slope, 1/deg.
    pub b1: f64,
    /// Drag coefficient offset (-).
    pub a0: f64,
    /// 1/deg
    pub a1: f64,
    /// 1/deg^2
    pub a2: f64,
    /// Admissible angle of attack, deg.
    pub alpha_range: Range,
    pub n_systems: usize,
    /// Total fuel on board, kg.
    pub fuel_mass: f64,
    /// Total battery mass, kg.
    pub battery_mass: f64,
    /// MJ/kg
    pub battery_energy_density: f64,
    /// Per-system battery energy window, MJ.
    pub soc_range: Range,
    /// Per-system gas turbine power range, MW.
    pub gt_power_range: Range,
    /// Per-system electric motor power range, MW.
    pub em_power_range: Range,
    /// Battery open-circuit voltage, V.
    pub battery_voltage: f64,
    /// Battery internal resistance, ohm.
    pub battery_resistance: f64,
    /// Mission time, s.
    pub mission_time: f64,
    pub topology: Topology,
}

impl Default for PowertrainParams {
    fn default() -> Self {
        Self {
            mtow: 42_000.0,
            g_accel: 9.81,
            wing_area: 77.3,
            air_density: 1.225,
            b0: 0.43,
            b1: 0.11,
            a0: 0.029,
            a1: 0.004,
            a2: 5.3e-4,
            alpha_range: Range::new(-3.9, 10.0),
            n_systems: 4,
            fuel_mass: 4000.0,
            battery_mass: 8000.0,
            battery_energy_density: 0.875,
            soc_range: Range::new(350.0, 1487.0),
            gt_power_range: Range::new(0.0, 5.0),
            em_power_range: Range::new(0.0, 5.0),
            battery_voltage: 1500.0,
            battery_resistance: 0.035,
            mission_time: 3600.0,
            topology: Topology::Parallel,
        }
    }
}

impl PowertrainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        for (name, r) in [
            ("alpha_range", self.alpha_range),
            ("soc_range", self.soc_range),
            ("gt_power_range", self.gt_power_range),
            ("em_power_range", self.em_power_range),
        ] {
            if !(r.lo <= r.hi) {
                return bad(format!("{name} is empty: [{}, {}]", r.lo, r.hi));
            }
        }
        for (name, v) in [
            ("air_density", self.air_density),
            ("wing_area", self.wing_area),
            ("battery_voltage", self.battery_voltage),
            ("battery_resistance", self.battery_resistance),
            ("b1", self.b1),
            ("a2", self.a2),
            ("mtow", self.mtow),
            ("g_accel", self.g_accel),
            ("mission_time", self.mission_time),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.n_systems == 0 {
            return bad("n_systems must be at least 1".into());
        }
        let capacity = self.battery_capacity_per_system();
        if self.soc_range.lo < 0.0 || self.soc_range.hi > capacity * (1.0 + 1e-12) {
            return bad(format!(
                "soc_range [{}, {}] MJ exceeds per-system capacity [0, {capacity}] MJ",
                self.soc_range.lo, self.soc_range.hi
            ));
        }
        Ok(())
    }

    /// Battery energy available to one propulsion system, MJ.
    pub fn battery_capacity_per_system(&self) -> f64 {
        self.battery_mass / self.n_systems as f64 * self.battery_energy_density
    }

    /// `U^2 / R` expressed in MW.
    pub fn battery_power_scale(&self) -> f64 {
        self.battery_voltage * self.battery_voltage / self.battery_resistance * 1e-6
    }

    /// Largest effective power the equivalent circuit can deliver, `U^2/4R`.
    pub fn max_effective_power(&self) -> f64 {
        0.25 * self.battery_power_scale()
    }

    /// Chemical power at the delivery limit, `U^2/2R`.
    pub fn max_chemical_power(&self) -> f64 {
        0.5 * self.battery_power_scale()
    }

    /// Same aircraft with a different battery mass; the SOC window keeps
    /// its fractions of the per-system capacity.
    pub fn with_battery_mass(&self, battery_mass: f64) -> PowertrainParams {
        let ratio = battery_mass / self.battery_mass;
        PowertrainParams {
            battery_mass,
            soc_range: Range::new(self.soc_range.lo * ratio, self.soc_range.hi * ratio),
            ..self.clone()
        }
    }

    /// Aircraft mass attributed to one propulsion system.
    pub fn mass_share(&self, aircraft_mass: f64) -> f64 {
        aircraft_mass / self.n_systems as f64
    }
}

/// Chemical battery power drawn to deliver `p_c` at the terminals.
pub fn battery_chemical_power(p_c: f64, params: &PowertrainParams) -> Result<f64> {
    let k = params.battery_power_scale();
    let radicand = 1.0 - 4.0 * p_c / k;
    if radicand < -RADICAND_TOL {
        return Err(Error::Domain {
            what: "battery_chemical_power",
            value: p_c,
            lo: f64::NEG_INFINITY,
            hi: 0.25 * k,
        });
    }
    // 2 p_c / (1 + sqrt(.)) is algebraically (k/2)(1 - sqrt(.)) without the
    // cancellation near p_c = 0.
    Ok(2.0 * p_c / (1.0 + radicand.max(0.0).sqrt()))
}

/// Inverse of [`battery_chemical_power`] on its monotone branch:
/// `p_c = p_b - p_b^2 R / U^2`.
pub fn battery_effective_power(p_b: f64, params: &PowertrainParams) -> f64 {
    p_b - p_b * p_b / params.battery_power_scale()
}

/// Value and first two derivatives of a scalar function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const fn new(v: f64, d1: f64, d2: f64) -> Self {
        Self { v, d1, d2 }
    }

    pub fn constant(v: f64) -> Self {
        Self::new(v, 0.0, 0.0)
    }

    pub fn variable(v: f64) -> Self {
        Self::new(v, 1.0, 0.0)
    }

    /// Chain rule: `outer` evaluated at `self.v`, composed with `self`.
    pub fn compose(self, outer: Jet) -> Jet {
        Jet::new(
            outer.v,
            outer.d1 * self.d1,
            outer.d2 * self.d1 * self.d1 + outer.d1 * self.d2,
        )
    }
}

impl std::ops::Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        Jet::new(self.v - rhs.v, self.d1 - rhs.d1, self.d2 - rhs.d2)
    }
}

/// Jet of the equivalent-circuit map `g` at `p_c`.
pub fn battery_chemical_jet(p_c: f64, params: &PowertrainParams) -> Result<Jet> {
    let k = params.battery_power_scale();
    let v = battery_chemical_power(p_c, params)?;
    let root = (1.0 - 4.0 * p_c / k).max(0.0).sqrt();
    let d1 = 1.0 / root;
    let d2 = 2.0 / (k * root * root * root);
    Ok(Jet::new(v, d1, d2))
}

/// Jet of `g^{-1}` at `p_b`.
pub fn battery_effective_jet(p_b: f64, params: &PowertrainParams) -> Jet {
    let k = params.battery_power_scale();
    Jet::new(battery_effective_power(p_b, params), 1.0 - 2.0 * p_b / k, -2.0 / k)
}

/// `c2 x^2 + c1 x + c0`, used for the motor, generator and fuel maps at one
/// time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadMap {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuadMap {
    pub const IDENTITY: QuadMap = QuadMap::new(0.0, 1.0, 0.0);

    pub const fn new(c2: f64, c1: f64, c0: f64) -> Self {
        Self { c2, c1, c0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c2 >= 0.0 && self.c1 > 0.0) || !self.c0.is_finite() {
            return Err(Error::InvalidParams(format!(
                "loss map ({}, {}, {}) needs c2 >= 0 and c1 > 0",
                self.c2, self.c1, self.c0
            )));
        }
        Ok(())
    }

    /// Start of the nondecreasing branch, `-c1 / 2 c2`; `None` when linear.
    pub fn vertex(&self) -> Option<f64> {
        (self.c2 > 0.0).then(|| -self.c1 / (2.0 * self.c2))
    }

    /// Smallest attainable output (`-inf` for a linear map).
    pub fn min_value(&self) -> f64 {
        match self.vertex() {
            Some(_) => self.c0 - self.c1 * self.c1 / (4.0 * self.c2),
            None => f64::NEG_INFINITY,
        }
    }

    fn raw(&self, x: f64) -> f64 {
        (self.c2 * x + self.c1) * x + self.c0
    }

    /// Evaluate on the monotone branch, rejecting arguments below the vertex.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if let Some(v) = self.vertex() {
            if x < v - RADICAND_TOL * v.abs().max(1.0) {
                return Err(Error::Monotonicity {
                    what: "quad_map_eval",
                    value: x,
                    vertex: v,
                });
            }
        }
        Ok(self.raw(x))
    }

    /// Nondecreasing convex extension: the quadratic above the vertex, flat
    /// below it. Identical to [`QuadMap::eval`] wherever that succeeds.
    pub fn eval_monotone(&self, x: f64) -> f64 {
        self.jet_monotone(x).v
    }

    pub fn jet_monotone(&self, x: f64) -> Jet {
        match self.vertex() {
            Some(v) if x < v => Jet::constant(self.raw(v)),
            _ => Jet::new(self.raw(x), 2.0 * self.c2 * x + self.c1, 2.0 * self.c2),
        }
    }

    /// Unique preimage of `y` on the monotone branch.
    pub fn invert(&self, y: f64) -> Result<f64> {
        if self.c2 == 0.0 {
            return Ok((y - self.c0) / self.c1);
        }
        let disc = self.c1 * self.c1 + 4.0 * self.c2 * (y - self.c0);
        if disc < -RADICAND_TOL * self.c1 * self.c1 {
            return Err(Error::NoSolution {
                what: "quad_map_invert",
                target: y,
                minimum: self.min_value(),
            });
        }
        // Rationalized root; stays accurate as c2 -> 0.
        Ok(2.0 * (y - self.c0) / (self.c1 + disc.max(0.0).sqrt()))
    }

    /// Jet of the inverse map at `y`.
    pub fn inverse_jet(&self, y: f64) -> Result<Jet> {
        let x = self.invert(y)?;
        let slope = 2.0 * self.c2 * x + self.c1;
        if slope <= 0.0 {
            return Err(Error::Monotonicity {
                what: "quad_map_invert",
                value: y,
                vertex: self.min_value(),
            });
        }
        Ok(Jet::new(x, 1.0 / slope, -2.0 * self.c2 / (slope * slope * slope)))
    }

    /// Largest `x` with `self(x) = y`, i.e. the monotone-branch root.
    pub fn solve_upper_root(&self, y: f64) -> Result<f64> {
        self.invert(y)
    }
}

/// Drive power as a quadratic in mass, `eta2 m^2 + eta1 m + eta0` (MW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaCoeffs {
    pub eta2: f64,
    pub eta1: f64,
    pub eta0: f64,
}

impl EtaCoeffs {
    pub const fn new(eta2: f64, eta1: f64, eta0: f64) -> Self {
        Self { eta2, eta1, eta0 }
    }

    /// Re-express whole-aircraft coefficients in the per-system frame, where
    /// the argument is the mass share `m / n` and the output is the drive
    /// power of one propulsion system.
    pub fn per_system(&self, n_systems: usize) -> EtaCoeffs {
        let n = n_systems as f64;
        EtaCoeffs::new(self.eta2 * n, self.eta1, self.eta0 / n)
    }

    pub fn jet(&self, m: f64) -> Jet {
        Jet::new(
            (self.eta2 * m + self.eta1) * m + self.eta0,
            2.0 * self.eta2 * m + self.eta1,
            2.0 * self.eta2,
        )
    }
}

/// Drive power at mass `m`; with `per_system = Some(n)` the whole-aircraft
/// value is split evenly over `n` systems.
pub fn drive_power(eta: &EtaCoeffs, m: f64, per_system: Option<usize>) -> f64 {
    let total = (eta.eta2 * m + eta.eta1) * m + eta.eta0;
    match per_system {
        Some(n) => total / n as f64,
        None => total,
    }
}

/// Forward-Euler kinematic terms of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepKinematics {
    pub v: f64,
    pub gamma: f64,
    /// (v_{i+1}^2 - v_i^2) / delta
    pub dv2: f64,
    /// (gamma_{i+1} - gamma_i) / delta
    pub dgamma: f64,
}

impl StepKinematics {
    pub fn from_samples(v: f64, v_next: f64, gamma: f64, gamma_next: f64, delta: f64) -> Self {
        Self {
            v,
            gamma,
            dv2: (v_next * v_next - v * v) / delta,
            dgamma: (gamma_next - gamma) / delta,
        }
    }

    /// Normal acceleration per unit mass required along the lift vector.
    fn lift_demand(&self, g: f64) -> f64 {
        self.v * self.dgamma + g * self.gamma.cos()
    }
}

/// Whole-aircraft drive power coefficients obtained by eliminating the angle
/// of attack between the lift balance (thrust tilt neglected) and the power
/// equation.
pub fn drive_power_coefficients(
    v: f64,
    v_next: f64,
    gamma: f64,
    gamma_next: f64,
    delta: f64,
    params: &PowertrainParams,
) -> EtaCoeffs {
    eta_from_kinematics(
        &StepKinematics::from_samples(v, v_next, gamma, gamma_next, delta),
        params,
    )
}

pub fn eta_from_kinematics(k: &StepKinematics, p: &PowertrainParams) -> EtaCoeffs {
    let a = k.lift_demand(p.g_accel);
    let v = k.v;
    let rho_s = p.air_density * p.wing_area;
    let b1sq = p.b1 * p.b1;
    let eta2 = 2.0 * p.a2 * a * a / (b1sq * rho_s * v);
    let eta1 = 0.5 * k.dv2 + p.g_accel * k.gamma.sin() * v - 2.0 * p.a2 * p.b0 * a * v / b1sq
        + p.a1 / p.b1 * a * v;
    let eta0 = 0.5 * rho_s * v.powi(3) * (p.a2 * p.b0 * p.b0 / b1sq - p.a1 * p.b0 / p.b1 + p.a0);
    // W -> MW
    EtaCoeffs::new(eta2 * 1e-6, eta1 * 1e-6, eta0 * 1e-6)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaCheck {
    /// deg
    pub alpha: f64,
    pub in_range: bool,
}

/// Angle of attack implied by the lift balance at mass `m`.
pub fn recover_alpha(m: f64, v: f64, gamma: f64, dgamma: f64, params: &PowertrainParams) -> AlphaCheck {
    let dynamic = 0.5 * params.air_density * params.wing_area * v * v;
    let cl = m * (v * dgamma + params.g_accel * gamma.cos()) / dynamic;
    let alpha = (cl - params.b0) / params.b1;
    AlphaCheck {
        alpha,
        in_range: params.alpha_range.contains(alpha),
    }
}
