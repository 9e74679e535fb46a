//! Flight profile ingest and the per-step coefficient schedule.
//!
//! The schedule fixes everything the convex program treats as data: loss-map
//! coefficients at the estimated shaft speeds, drive-power coefficients in
//! the per-system mass frame, and the effective bounds on fuel rate and
//! battery power.

use std::path::Path;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    battery_chemical_power, drive_power, drive_power_coefficients, recover_alpha, EtaCoeffs,
    PowertrainParams, QuadMap, Topology,
};

/// Specific heat of air at constant pressure, J/(kg K).
pub const CP_AIR: f64 = 1005.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    /// s
    pub t: f64,
    /// m
    pub h: f64,
    /// true airspeed, m/s
    pub v: f64,
    /// flight-path angle, rad
    pub gamma: f64,
}

/// Uniformly sampled flight path. Holds `N + 1` samples for `N` control
/// steps: the terminal sample supplies the forward differences of the last
/// step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlightProfile {
    pub delta: f64,
    samples: Vec<ProfileSample>,
}

impl FlightProfile {
    pub fn new(delta: f64, samples: Vec<ProfileSample>) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Precondition(format!("sampling interval {delta} must be positive")));
        }
        for (i, w) in samples.windows(2).enumerate() {
            let dt = w[1].t - w[0].t;
            if (dt - delta).abs() > 1e-9 * delta.max(1.0) {
                return Err(Error::Precondition(format!(
                    "sample {} spacing {dt} differs from delta {delta}",
                    i + 1
                )));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.v > 0.0) {
                return Err(Error::Precondition(format!("sample {i}: airspeed {} must be positive", s.v)));
            }
            if !(s.gamma.abs() < std::f64::consts::FRAC_PI_2) {
                return Err(Error::Precondition(format!("sample {i}: |gamma| = {} >= pi/2", s.gamma.abs())));
            }
        }
        Ok(Self { delta, samples })
    }

    /// Build from altitude and speed only, deriving the flight-path angle
    /// from successive altitudes.
    pub fn from_altitude_speed(delta: f64, t0: f64, h: &[f64], v: &[f64]) -> Result<Self> {
        if h.len() != v.len() {
            return Err(Error::Dimension(format!("{} altitudes vs {} speeds", h.len(), v.len())));
        }
        let gamma = path_angles(h, v, delta)?;
        let samples = (0..h.len())
            .map(|i| ProfileSample {
                t: t0 + i as f64 * delta,
                h: h[i],
                v: v[i],
                gamma: gamma[i],
            })
            .collect();
        Self::new(delta, samples)
    }

    /// Number of control steps.
    pub fn n_steps(&self) -> usize {
        self.samples.len().saturating_sub(1)
    }

    pub fn samples(&self) -> &[ProfileSample] {
        &self.samples
    }

    /// Sample `i` and its successor.
    pub fn step(&self, i: usize) -> (ProfileSample, ProfileSample) {
        (self.samples[i], self.samples[i + 1])
    }

    /// Remaining profile from step `k` on.
    pub fn tail(&self, k: usize) -> FlightProfile {
        FlightProfile {
            delta: self.delta,
            samples: self.samples[k.min(self.samples.len())..].to_vec(),
        }
    }

    /// Same path with every altitude scaled so the peak equals `max_h`.
    pub fn with_max_altitude(&self, max_h: f64) -> Result<FlightProfile> {
        let peak = self.samples.iter().map(|s| s.h).fold(f64::NEG_INFINITY, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Precondition("profile never climbs; cannot rescale altitude".into()));
        }
        let h: Vec<f64> = self.samples.iter().map(|s| s.h * max_h / peak).collect();
        let v: Vec<f64> = self.samples.iter().map(|s| s.v).collect();
        Self::from_altitude_speed(self.delta, self.t0(), &h, &v)
    }

    /// Same path with every airspeed scaled so the peak equals `max_v`.
    pub fn with_max_speed(&self, max_v: f64) -> Result<FlightProfile> {
        let peak = self.samples.iter().map(|s| s.v).fold(f64::NEG_INFINITY, f64::max);
        let h: Vec<f64> = self.samples.iter().map(|s| s.h).collect();
        let v: Vec<f64> = self.samples.iter().map(|s| s.v * max_v / peak).collect();
        Self::from_altitude_speed(self.delta, self.t0(), &h, &v)
    }

    /// Resample to a new interval over the same time span.
    pub fn resample(&self, delta: f64) -> Result<FlightProfile> {
        let raw: Vec<RawRow> = self
            .samples
            .iter()
            .map(|s| RawRow { t: s.t, h: s.h, v: s.v, gamma: Some(s.gamma) })
            .collect();
        resample_rows(&raw, delta, true)
    }

    fn t0(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }
}

fn path_angles(h: &[f64], v: &[f64], delta: f64) -> Result<Vec<f64>> {
    let n = h.len();
    let mut gamma = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let ratio = (h[i + 1] - h[i]) / (v[i] * delta);
        if ratio.abs() > 1.0 {
            return Err(Error::InfeasibleClimb { step: i, ratio });
        }
        gamma[i] = ratio.asin();
    }
    if n >= 2 {
        gamma[n - 1] = gamma[n - 2];
    }
    Ok(gamma)
}

#[derive(Debug, Clone, Copy)]
struct RawRow {
    t: f64,
    h: f64,
    v: f64,
    gamma: Option<f64>,
}

fn interp(rows: &[RawRow], t: f64, pick: impl Fn(&RawRow) -> f64) -> f64 {
    let last = rows.len() - 1;
    if t <= rows[0].t {
        return pick(&rows[0]);
    }
    if t >= rows[last].t {
        return pick(&rows[last]);
    }
    let j = rows.partition_point(|r| r.t <= t).max(1);
    let (a, b) = (&rows[j - 1], &rows[j]);
    let w = (t - a.t) / (b.t - a.t);
    pick(a) + w * (pick(b) - pick(a))
}

fn resample_rows(rows: &[RawRow], delta: f64, have_gamma: bool) -> Result<FlightProfile> {
    if rows.is_empty() {
        return FlightProfile::new(delta, Vec::new());
    }
    let t0 = rows[0].t;
    let span = rows[rows.len() - 1].t - t0;
    let n_steps = (span / delta - 1e-9).ceil().max(0.0) as usize;
    let times: Vec<f64> = (0..=n_steps).map(|i| t0 + i as f64 * delta).collect();
    let h: Vec<f64> = times.iter().map(|&t| interp(rows, t, |r| r.h)).collect();
    let v: Vec<f64> = times.iter().map(|&t| interp(rows, t, |r| r.v)).collect();
    if have_gamma {
        let samples = times
            .iter()
            .enumerate()
            .map(|(i, &t)| ProfileSample {
                t,
                h: h[i],
                v: v[i],
                gamma: interp(rows, t, |r| r.gamma.unwrap_or(0.0)),
            })
            .collect();
        FlightProfile::new(delta, samples)
    } else {
        FlightProfile::from_altitude_speed(delta, t0, &h, &v)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), message: message.into() }
}

/// Read a `t,h,v[,gamma]` CSV and resample it to a uniform interval.
pub fn load_flight_profile(path: &Path, delta: f64) -> Result<FlightProfile> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_flight_profile(&text, delta).map_err(|e| match e {
        Error::Parse { message, .. } => parse_err(path, message),
        other => other,
    })
}

pub fn parse_flight_profile(text: &str, delta: f64) -> Result<FlightProfile> {
    let origin = Path::new("<profile>");
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(origin, e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (ti, hi, vi) = match (col("t"), col("h"), col("v")) {
        (Some(t), Some(h), Some(v)) => (t, h, v),
        _ => return Err(parse_err(origin, "header must contain t,h,v")),
    };
    let gi = col("gamma");
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(origin, e.to_string()))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .ok_or_else(|| parse_err(origin, format!("row {}: missing column {i}", line + 1)))?
                .parse::<f64>()
                .map_err(|e| parse_err(origin, format!("row {}: {e}", line + 1)))
        };
        rows.push(RawRow {
            t: field(ti)?,
            h: field(hi)?,
            v: field(vi)?,
            gamma: gi.map(field).transpose()?,
        });
    }
    if rows.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(parse_err(origin, "time column must be strictly increasing"));
    }
    resample_rows(&rows, delta, gi.is_some())
}

/// Standard-atmosphere temperature, K: linear lapse to 11 km, isothermal
/// above.
pub fn isa_temperature(h: f64) -> f64 {
    if h <= 11_000.0 {
        288.15 - 0.0065 * h
    } else {
        216.65
    }
}

/// Non-dimensional fan speed on a rectangular (altitude, drive power) grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FanMapTable {
    /// m, strictly increasing
    pub altitudes: Vec<f64>,
    /// MW per system, strictly increasing
    pub powers: Vec<f64>,
    /// `speed[a][p]`
    pub speed: Vec<Vec<f64>>,
    pub mach: f64,
}

impl FanMapTable {
    pub fn new(altitudes: Vec<f64>, powers: Vec<f64>, speed: Vec<Vec<f64>>, mach: f64) -> Result<Self> {
        let increasing = |xs: &[f64]| !xs.is_empty() && xs.windows(2).all(|w| w[1] > w[0]);
        if !increasing(&altitudes) || !increasing(&powers) {
            return Err(Error::InvalidParams("fan map axes must be nonempty and strictly increasing".into()));
        }
        if speed.len() != altitudes.len() || speed.iter().any(|r| r.len() != powers.len()) {
            return Err(Error::InvalidParams("fan map grid is not rectangular".into()));
        }
        if speed.iter().flatten().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParams("fan map speeds must be positive".into()));
        }
        Ok(Self { altitudes, powers, speed, mach })
    }

    /// Synthetic map: speed affine in log-power, mildly decreasing with
    /// altitude.
    pub fn synthetic() -> Self {
        let altitudes: Vec<f64> = (0..=6).map(|i| i as f64 * 2000.0).collect();
        let powers = vec![0.1, 0.25, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let speed = altitudes
            .iter()
            .map(|&h| powers.iter().map(|&p| synthetic_fan_speed(h, p)).collect())
            .collect();
        Self { altitudes, powers, speed, mach: 0.55 }
    }

    /// Bilinear interpolation; queries outside the grid are clamped onto it.
    pub fn lookup(&self, h: f64, p_drv: f64) -> f64 {
        let (ha, hb) = (self.altitudes[0], self.altitudes[self.altitudes.len() - 1]);
        let (pa, pb) = (self.powers[0], self.powers[self.powers.len() - 1]);
        if p_drv < 0.0 && p_drv < pa {
            // windmilling descent; the fan turns at its lowest tabulated speed
            debug!("fan map query (h={h:.1} m, P={p_drv:.4} MW) below grid; clamping");
        } else if h < ha || h > hb || p_drv < pa || p_drv > pb {
            warn!("fan map query (h={h:.1} m, P={p_drv:.4} MW) outside grid; clamping");
        }
        let (i, wh) = bracket(&self.altitudes, h);
        let (j, wp) = bracket(&self.powers, p_drv);
        let at = |a: usize, p: usize| self.speed[a][p];
        let i1 = (i + 1).min(self.altitudes.len() - 1);
        let j1 = (j + 1).min(self.powers.len() - 1);
        let low = at(i, j) + wp * (at(i, j1) - at(i, j));
        let high = at(i1, j) + wp * (at(i1, j1) - at(i1, j));
        low + wh * (high - low)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("altitude,drive_power,speed\n");
        for (a, row) in self.altitudes.iter().zip(&self.speed) {
            for (p, s) in self.powers.iter().zip(row) {
                out.push_str(&format!("{a},{p},{s}\n"));
            }
        }
        out
    }

    /// Long-format CSV `altitude,drive_power,speed` covering a full grid.
    pub fn parse_csv(text: &str, mach: f64) -> Result<Self> {
        let origin = Path::new("<fan map>");
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| parse_err(origin, e.to_string()))?.clone();
        let expect = ["altitude", "drive_power", "speed"];
        if headers.len() != 3 || headers.iter().zip(expect).any(|(a, b)| !a.eq_ignore_ascii_case(b)) {
            return Err(parse_err(origin, "header must be altitude,drive_power,speed"));
        }
        let mut triples = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse_err(origin, e.to_string()))?;
            let mut vals = [0.0; 3];
            for (k, v) in vals.iter_mut().enumerate() {
                *v = rec[k].parse().map_err(|e| parse_err(origin, format!("{e}")))?;
            }
            triples.push(vals);
        }
        let mut altitudes: Vec<f64> = triples.iter().map(|t| t[0]).collect();
        let mut powers: Vec<f64> = triples.iter().map(|t| t[1]).collect();
        for axis in [&mut altitudes, &mut powers] {
            axis.sort_by(|a, b| a.total_cmp(b));
            axis.dedup();
        }
        let mut speed = vec![vec![f64::NAN; powers.len()]; altitudes.len()];
        for t in &triples {
            let a = altitudes.partition_point(|&x| x < t[0]);
            let p = powers.partition_point(|&x| x < t[1]);
            speed[a][p] = t[2];
        }
        if speed.iter().flatten().any(|s| s.is_nan()) || triples.len() != altitudes.len() * powers.len() {
            return Err(parse_err(origin, "fan map rows do not form a complete rectangular grid"));
        }
        Self::new(altitudes, powers, speed, mach)
    }

    pub fn load(path: &Path, mach: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_csv(&text, mach).map_err(|e| match e {
            Error::Parse { message, .. } => parse_err(path, message),
            other => other,
        })
    }
}

fn synthetic_fan_speed(h: f64, p: f64) -> f64 {
    55.0 + 11.0 * (p / 0.1).ln() - 1.0e-3 * h
}

/// Index of the lower grid node and interpolation weight, clamped.
fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
    let n = axis.len();
    if n == 1 || x <= axis[0] {
        return (0, 0.0);
    }
    if x >= axis[n - 1] {
        return (n - 1, 0.0);
    }
    let j = axis.partition_point(|&a| a <= x) - 1;
    (j, (x - axis[j]) / (axis[j + 1] - axis[j]))
}

/// Fan shaft speed (rad/s) from the fan map and inlet temperature.
pub fn shaft_speed(p_drv: f64, h: f64, v: f64, fan_map: &FanMapTable) -> f64 {
    let omega_nd = fan_map.lookup(h, p_drv);
    let t_in = isa_temperature(h) + v * v / (2.0 * CP_AIR);
    156.7 / 100.0 * std::f64::consts::PI / 30.0 * omega_nd * t_in.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    /// rad/s
    pub omega: f64,
    pub motor: QuadMap,
    pub generator: QuadMap,
    pub fuel: QuadMap,
}

/// Loss and fuel map coefficients sampled over shaft speed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTable {
    rows: Vec<LossRow>,
}

pub const LOSS_TABLE_HEADER: &str = "omega,kappa2,kappa1,kappa0,nu2,nu1,nu0,beta2,beta1,beta0";

impl LossTable {
    pub fn new(mut rows: Vec<LossRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParams("loss table has no rows".into()));
        }
        rows.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        if rows.windows(2).any(|w| w[1].omega <= w[0].omega) {
            return Err(Error::InvalidParams("duplicate shaft speed in loss table".into()));
        }
        for r in &rows {
            r.motor.validate()?;
            r.generator.validate()?;
            r.fuel.validate()?;
        }
        Ok(Self { rows })
    }

    /// Speed-independent table: motor and generator map `c2 x^2 + c1 x`
    /// calibrated so that efficiency at 2 MW is 95 %, linear fuel map.
    pub fn synthetic() -> Self {
        let machine = machine_map_for_efficiency(1.03, 0.95, 2.0);
        let fuel = QuadMap::new(0.0, 0.0821, 0.0327);
        let rows = [0.0, 1000.0]
            .into_iter()
            .map(|omega| LossRow { omega, motor: machine, generator: machine, fuel })
            .collect();
        Self { rows }
    }

    pub fn rows(&self) -> &[LossRow] {
        &self.rows
    }

    /// A single-row table applies at every speed.
    pub fn speed_range(&self) -> Option<(f64, f64)> {
        (self.rows.len() > 1).then(|| (self.rows[0].omega, self.rows[self.rows.len() - 1].omega))
    }

    pub fn covers(&self, omega: f64) -> bool {
        self.speed_range().is_none_or(|(lo, hi)| lo <= omega && omega <= hi)
    }

    /// Piecewise-linear interpolation per coefficient, clamped at the ends.
    pub fn at(&self, omega: f64) -> LossRow {
        let n = self.rows.len();
        if n == 1 || omega <= self.rows[0].omega {
            return LossRow { omega, ..self.rows[0] };
        }
        if omega >= self.rows[n - 1].omega {
            return LossRow { omega, ..self.rows[n - 1] };
        }
        let j = self.rows.partition_point(|r| r.omega <= omega) - 1;
        let (a, b) = (&self.rows[j], &self.rows[j + 1]);
        let w = (omega - a.omega) / (b.omega - a.omega);
        let mix = |p: &QuadMap, q: &QuadMap| {
            QuadMap::new(p.c2 + w * (q.c2 - p.c2), p.c1 + w * (q.c1 - p.c1), p.c0 + w * (q.c0 - p.c0))
        };
        LossRow {
            omega,
            motor: mix(&a.motor, &b.motor),
            generator: mix(&a.generator, &b.generator),
            fuel: mix(&a.fuel, &b.fuel),
        }
    }

    /// Multiply the fuel-map slope of every row.
    pub fn scale_fuel_slope(&mut self, factor: f64) {
        for r in &mut self.rows {
            r.fuel.c1 *= factor;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOSS_TABLE_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.omega, r.motor.c2, r.motor.c1, r.motor.c0, r.generator.c2, r.generator.c1,
                r.generator.c0, r.fuel.c2, r.fuel.c1, r.fuel.c0
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let origin = Path::new("<loss table>");
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| parse_err(origin, e.to_string()))?.clone();
        let expected: Vec<&str> = LOSS_TABLE_HEADER.split(',').collect();
        if headers.iter().ne(expected.iter().copied()) {
            return Err(parse_err(origin, format!("header must be {LOSS_TABLE_HEADER}")));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| parse_err(origin, e.to_string()))?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(origin, e.to_string()))?;
            if v.len() != 10 {
                return Err(parse_err(origin, "expected 10 columns"));
            }
            rows.push(LossRow {
                omega: v[0],
                motor: QuadMap::new(v[1], v[2], v[3]),
                generator: QuadMap::new(v[4], v[5], v[6]),
                fuel: QuadMap::new(v[7], v[8], v[9]),
            });
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse_csv(&text).map_err(|e| match e {
            Error::Parse { message, .. } => parse_err(path, message),
            other => other,
        })
    }
}

/// `c2 x^2 + c1 x` with the given linear coefficient and efficiency
/// `x / h(x)` at power `x`.
pub fn machine_map_for_efficiency(c1: f64, efficiency: f64, at_power: f64) -> QuadMap {
    let c2 = (at_power / efficiency - c1 * at_power) / (at_power * at_power);
    QuadMap::new(c2, c1, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleOptions {
    /// Ratio between turbo-generator and fan shaft speed (series).
    pub series_speed_ratio: f64,
    /// Lower gas turbine ceiling replacing the nominal maximum, MW.
    pub gt_power_cap: Option<f64>,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self { series_speed_ratio: 1.0, gt_power_cap: None }
    }
}

/// Effective per-step box constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepBounds {
    /// kg/s
    pub phi_lo: f64,
    pub phi_hi: f64,
    /// MW
    pub pb_lo: f64,
    pub pb_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleStep {
    pub t: f64,
    pub h: f64,
    pub v: f64,
    /// Motor map (parallel: motor; series: fan motor).
    pub kappa: QuadMap,
    /// Generator map (series only, carried for both).
    pub nu: QuadMap,
    pub beta: QuadMap,
    /// Drive power of one system as a function of the per-system mass share.
    pub eta: EtaCoeffs,
    pub omega_drv: f64,
    pub omega_gt: f64,
    pub bounds: StepBounds,
    /// Per-system drive power at the reference mass, MW.
    pub p_drv_estimate: f64,
    /// Angle of attack at the reference mass lies in the admissible range.
    pub alpha_ok: bool,
}

/// Everything the convex program needs per step, fixed before solving.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSchedule {
    pub topology: Topology,
    pub delta: f64,
    pub params: PowertrainParams,
    pub options: ScheduleOptions,
    pub steps: Vec<ScheduleStep>,
}

impl CoefficientSchedule {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Steps `k..`, keeping bounds as computed.
    pub fn tail(&self, k: usize) -> CoefficientSchedule {
        CoefficientSchedule { steps: self.steps[k.min(self.steps.len())..].to_vec(), ..self.clone() }
    }

    pub fn truncate(&mut self, n: usize) {
        self.steps.truncate(n);
    }

    /// Recompute every step's bounds from its maps.
    pub fn recompute_bounds(&mut self) -> Result<()> {
        let bounds = compute_bounds(self, &self.params, self.topology)?;
        for (s, b) in self.steps.iter_mut().zip(bounds) {
            s.bounds = b;
        }
        Ok(())
    }
}

/// Loss and fan tables used to build a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Tables {
    pub losses: LossTable,
    pub fan: FanMapTable,
}

impl Default for Tables {
    /// The shipped synthetic tables.
    fn default() -> Self {
        Self {
            losses: LossTable::parse_csv(DEFAULT_LOSSES_CSV).expect("shipped loss table parses"),
            fan: FanMapTable::parse_csv(DEFAULT_FAN_MAP_CSV, 0.55).expect("shipped fan map parses"),
        }
    }
}

pub const DEFAULT_MISSION_CSV: &str = include_str!("../data/mission.csv");
pub const STEEP_DESCENT_MISSION_CSV: &str = include_str!("../data/mission_steep_descent.csv");
pub const DEFAULT_LOSSES_CSV: &str = include_str!("../data/losses.csv");
pub const DEFAULT_FAN_MAP_CSV: &str = include_str!("../data/fan_map.csv");

/// One-hour climb, cruise at 190 m/s and gentle descent; drive power stays
/// positive throughout.
pub fn default_profile(delta: f64) -> Result<FlightProfile> {
    parse_flight_profile(DEFAULT_MISSION_CSV, delta)
}

/// Same climb and cruise with a steep final descent whose drive power is
/// negative.
pub fn steep_descent_profile(delta: f64) -> Result<FlightProfile> {
    parse_flight_profile(STEEP_DESCENT_MISSION_CSV, delta)
}

/// Per-system drive power at a fixed aircraft mass `m0` (kg).
pub fn estimate_drive_power_profile(profile: &FlightProfile, m0: f64, params: &PowertrainParams) -> Vec<f64> {
    (0..profile.n_steps())
        .map(|i| {
            let (a, b) = profile.step(i);
            let eta = drive_power_coefficients(a.v, b.v, a.gamma, b.gamma, profile.delta, params);
            drive_power(&eta, m0, Some(params.n_systems))
        })
        .collect()
}

/// Assemble the coefficient schedule for the whole profile; `m0` is the
/// aircraft mass used for the drive power (and hence shaft speed) estimate.
pub fn build_schedule(
    profile: &FlightProfile,
    tables: &Tables,
    params: &PowertrainParams,
    m0: f64,
    options: ScheduleOptions,
) -> Result<CoefficientSchedule> {
    params.validate()?;
    let n = params.n_systems;
    let p_hat = estimate_drive_power_profile(profile, m0, params);
    let mut steps = Vec::with_capacity(profile.n_steps());
    for (i, &p_drv) in p_hat.iter().enumerate() {
        let (a, b) = profile.step(i);
        let eta = drive_power_coefficients(a.v, b.v, a.gamma, b.gamma, profile.delta, params);
        let omega_drv = shaft_speed(p_drv, a.h, a.v, &tables.fan);
        let omega_gt = match params.topology {
            Topology::Parallel => omega_drv,
            Topology::Series => options.series_speed_ratio * omega_drv,
        };
        for omega in [omega_drv, omega_gt] {
            if !tables.losses.covers(omega) {
                let (lo, hi) = tables.losses.speed_range().unwrap_or((omega, omega));
                return Err(Error::Coverage { step: i, omega, lo, hi });
            }
        }
        let at_drv = tables.losses.at(omega_drv);
        let at_gt = tables.losses.at(omega_gt);
        let kappa = at_drv.motor;
        if params.topology == Topology::Series {
            if let Some(v) = kappa.vertex() {
                if p_drv < v {
                    warn!("step {i}: drive power {p_drv:.4} MW below motor map vertex {v:.4} MW");
                }
            }
        }
        let dgamma = (b.gamma - a.gamma) / profile.delta;
        let alpha = recover_alpha(m0, a.v, a.gamma, dgamma, params);
        if !alpha.in_range {
            warn!("step {i}: angle of attack {:.3} deg outside admissible range", alpha.alpha);
        }
        steps.push(ScheduleStep {
            t: a.t,
            h: a.h,
            v: a.v,
            kappa,
            nu: at_gt.generator,
            beta: at_gt.fuel,
            eta: eta.per_system(n),
            omega_drv,
            omega_gt,
            bounds: StepBounds { phi_lo: 0.0, phi_hi: 0.0, pb_lo: 0.0, pb_hi: 0.0 },
            p_drv_estimate: p_drv,
            alpha_ok: alpha.in_range,
        });
    }
    let mut schedule = CoefficientSchedule {
        topology: params.topology,
        delta: profile.delta,
        params: params.clone(),
        options,
        steps,
    };
    schedule.recompute_bounds()?;
    Ok(schedule)
}

/// Battery map `g` saturated at its delivery limit: arguments above `U^2/4R`
/// return `U^2/2R`, which is the last candidate in every upper-bound `min`.
fn g_saturating(p_c: f64, params: &PowertrainParams) -> f64 {
    if p_c >= params.max_effective_power() {
        params.max_chemical_power()
    } else {
        battery_chemical_power(p_c, params).expect("argument below delivery limit")
    }
}

/// Monotone-branch inverse extended flat below the minimum.
fn invert_monotone(map: &QuadMap, y: f64) -> f64 {
    if y <= map.min_value() {
        map.vertex().unwrap_or(f64::NEG_INFINITY)
    } else {
        map.invert(y).expect("above map minimum")
    }
}

/// Bounds for one step. Vertex candidates of linear maps drop out.
pub fn step_bounds(
    kappa: &QuadMap,
    nu: &QuadMap,
    beta: &QuadMap,
    params: &PowertrainParams,
    topology: Topology,
    gt_cap: Option<f64>,
    step: usize,
) -> Result<StepBounds> {
    let gt = params.gt_power_range;
    let em = params.em_power_range;
    let gt_hi = gt_cap.map_or(gt.hi, |c| c.min(gt.hi));
    let f = |x: f64| beta.eval_monotone(x);
    let phi_hi = f(gt_hi);
    let mut phi_lo = f(gt.lo);
    if let Some(vb) = beta.vertex() {
        phi_lo = phi_lo.max(f(vb));
    }
    let (pb_lo, pb_hi) = match topology {
        Topology::Parallel => {
            let pc_max = params.max_effective_power();
            let em_lo = kappa.vertex().map_or(em.lo, |v| em.lo.max(v));
            let r_max = kappa.solve_upper_root(pc_max)?;
            let em_hi = em.hi.min(r_max);
            let lo_c = kappa.eval_monotone(em_lo);
            if lo_c > pc_max {
                return Err(Error::InfeasibleBounds { step, which: "battery power", lo: lo_c, hi: pc_max });
            }
            let lo = battery_chemical_power(lo_c, params)?;
            let hi = g_saturating(kappa.eval_monotone(em_hi), params);
            (lo, hi)
        }
        Topology::Series => {
            let gen_floor = nu.vertex().map(|v| nu.eval_monotone(v));
            if let Some(p) = gen_floor {
                phi_lo = phi_lo.max(f(p));
            }
            let f_tilde = |x: f64, y: f64| g_saturating(kappa.eval_monotone(x) - invert_monotone(nu, y), params);
            let lo = f_tilde(em.lo, gt_hi);
            let mut hi = f_tilde(em.hi, gt.lo).min(params.max_chemical_power());
            if let Some(vb) = beta.vertex() {
                hi = hi.min(f_tilde(em.hi, vb));
            }
            if let Some(p) = gen_floor {
                hi = hi.min(f_tilde(em.hi, p));
            }
            (lo, hi)
        }
    };
    if phi_lo > phi_hi {
        return Err(Error::InfeasibleBounds { step, which: "fuel rate", lo: phi_lo, hi: phi_hi });
    }
    if pb_lo > pb_hi {
        return Err(Error::InfeasibleBounds { step, which: "battery power", lo: pb_lo, hi: pb_hi });
    }
    Ok(StepBounds { phi_lo, phi_hi, pb_lo, pb_hi })
}

pub fn compute_bounds(
    schedule: &CoefficientSchedule,
    params: &PowertrainParams,
    topology: Topology,
) -> Result<Vec<StepBounds>> {
    schedule
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| step_bounds(&s.kappa, &s.nu, &s.beta, params, topology, schedule.options.gt_power_cap, i))
        .collect()
}

/// `U^2/4R`, the largest motor input power keeping `g` real, for an identity
/// motor map; exposed for tests of the general `r_max` computation.
pub fn r_max(kappa: &QuadMap, params: &PowertrainParams) -> Result<f64> {
    kappa.solve_upper_root(params.max_effective_power())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn level_profile(n: usize, delta: f64, h: f64, v: f64) -> FlightProfile {
        FlightProfile::from_altitude_speed(delta, 0.0, &vec![h; n + 1], &vec![v; n + 1]).unwrap()
    }

    #[test]
    fn constant_altitude_gives_zero_gamma() {
        let p = level_profile(10, 60.0, 5000.0, 190.0);
        assert!(p.samples().iter().all(|s| s.gamma == 0.0));
        assert_eq!(p.n_steps(), 10);
    }

    #[test]
    fn climb_angle_from_altitude() {
        let csv = "t,h,v\n0,0,190\n60,11.4,190\n120,22.8,190\n";
        let p = parse_flight_profile(csv, 60.0).unwrap();
        assert_relative_eq!(p.samples()[0].gamma, (11.4f64 / 11_400.0).asin(), max_relative = 1e-14);
        assert_relative_eq!(p.samples()[0].gamma, 1e-3, max_relative = 1e-6);
        assert_eq!(p.samples()[2].gamma, p.samples()[1].gamma);
    }

    #[test]
    fn hour_long_file_gives_sixty_steps() {
        let mut csv = String::from("t,h,v\n");
        for k in 0..=360 {
            csv.push_str(&format!("{},{},{}\n", k * 10, 1000.0, 190.0));
        }
        let p = parse_flight_profile(&csv, 60.0).unwrap();
        assert_eq!(p.n_steps(), 60);
        assert_eq!(p.n_steps(), (3600.0f64 / 60.0).ceil() as usize);
    }

    #[test]
    fn profile_errors() {
        assert!(matches!(parse_flight_profile("t,h\n0,0\n", 60.0), Err(Error::Parse { .. })));
        assert!(matches!(parse_flight_profile("t,h,v\n0,0,abc\n", 60.0), Err(Error::Parse { .. })));
        let steep = "t,h,v\n0,0,10\n60,700,10\n";
        assert!(matches!(parse_flight_profile(steep, 60.0), Err(Error::InfeasibleClimb { .. })));
    }

    #[test]
    fn explicit_gamma_column_is_used() {
        let csv = "t,h,v,gamma\n0,0,190,0.01\n60,0,190,0.02\n";
        let p = parse_flight_profile(csv, 30.0).unwrap();
        assert_eq!(p.n_steps(), 2);
        assert_relative_eq!(p.samples()[1].gamma, 0.015, max_relative = 1e-12);
    }

    #[test]
    fn drive_power_estimate_examples() {
        let params = PowertrainParams::default();
        let p = level_profile(3, 60.0, 6000.0, 190.0);
        let est = estimate_drive_power_profile(&p, 42_000.0, &params);
        assert_eq!(est.len(), 3);
        assert_relative_eq!(est[0], 1.9236, epsilon = 1e-4);

        let h: Vec<f64> = (0..3).map(|i| 6000.0 - 2000.0 * i as f64).collect();
        let descent = FlightProfile::from_altitude_speed(60.0, 0.0, &h, &[190.0; 3]).unwrap();
        let est = estimate_drive_power_profile(&descent, 42_000.0, &params);
        assert!(est[0] < 0.0);

        let empty = FlightProfile::new(60.0, vec![]).unwrap();
        assert!(estimate_drive_power_profile(&empty, 42_000.0, &params).is_empty());
    }

    #[test]
    fn shaft_speed_examples() {
        let flat = FanMapTable::new(vec![0.0, 10_000.0], vec![0.1, 10.0], vec![vec![100.0; 2]; 2], 0.55).unwrap();
        let w = shaft_speed(1.0, 0.0, 0.0, &flat);
        assert_relative_eq!(w, 1.567 * std::f64::consts::PI / 30.0 * 100.0 * 288.15f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(w, 278.6, epsilon = 0.05);
        // constant map: only inlet temperature matters
        assert_eq!(shaft_speed(0.5, 3000.0, 150.0, &flat), shaft_speed(5.0, 3000.0, 150.0, &flat));
        let t_in = isa_temperature(0.0) + 190.0f64.powi(2) / (2.0 * CP_AIR);
        assert_relative_eq!(t_in, 306.11, epsilon = 0.005);
    }

    #[test]
    fn fan_map_bilinear_and_csv() {
        let map = FanMapTable::synthetic();
        let back = FanMapTable::parse_csv(&map.to_csv(), 0.55).unwrap();
        assert_eq!(map, back);
        // bilinear interpolation is exact at nodes and on affine data
        assert_relative_eq!(map.lookup(2000.0, 1.0), synthetic_fan_speed(2000.0, 1.0), max_relative = 1e-12);
        let mid = map.lookup(3000.0, 1.0);
        assert_relative_eq!(mid, synthetic_fan_speed(3000.0, 1.0), max_relative = 1e-12);
        assert!(FanMapTable::parse_csv("altitude,drive_power,speed\n0,1,50\n0,2,60\n1000,1,49\n", 0.55).is_err());
    }

    #[test]
    fn loss_table_interpolation() {
        let a = QuadMap::new(0.01, 1.0, 0.0);
        let b = QuadMap::new(0.03, 1.1, 0.02);
        let fuel = QuadMap::new(0.0, 0.0821, 0.0327);
        let t = LossTable::new(vec![
            LossRow { omega: 100.0, motor: a, generator: a, fuel },
            LossRow { omega: 300.0, motor: b, generator: b, fuel },
        ])
        .unwrap();
        let m = t.at(200.0).motor;
        assert_relative_eq!(m.c2, 0.02, max_relative = 1e-14);
        assert_relative_eq!(m.c1, 1.05, max_relative = 1e-14);
        assert_eq!(t.at(50.0).motor, a);
        assert!(!t.covers(400.0));
        let back = LossTable::parse_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert!(LossTable::parse_csv("omega,k2\n1,2\n").is_err());
    }

    #[test]
    fn shipped_tables_match_generators() {
        let t = Tables::default();
        assert_eq!(t.losses, LossTable::synthetic());
        let synth = FanMapTable::synthetic();
        assert_eq!(t.fan.altitudes, synth.altitudes);
        assert_eq!(t.fan.powers, synth.powers);
        for (a, b) in t.fan.speed.iter().flatten().zip(synth.speed.iter().flatten()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-14);
        }
        assert_eq!(default_profile(60.0).unwrap().n_steps(), 60);
        assert_eq!(steep_descent_profile(60.0).unwrap().n_steps(), 60);
    }

    #[test]
    fn synthetic_machine_efficiency() {
        let m = LossTable::synthetic().rows()[0].motor;
        assert_relative_eq!(2.0 / m.eval(2.0).unwrap(), 0.95, max_relative = 1e-12);
        assert_eq!(m.c0, 0.0);
    }

    fn identity_bounds(topology: Topology) -> StepBounds {
        let params = PowertrainParams::default();
        let id = QuadMap::IDENTITY;
        let beta = QuadMap::new(0.0, 0.0821, 0.0327);
        step_bounds(&id, &id, &beta, &params, topology, None, 0).unwrap()
    }

    #[test]
    fn parallel_identity_bounds() {
        let params = PowertrainParams::default();
        let b = identity_bounds(Topology::Parallel);
        assert_relative_eq!(b.phi_lo, 0.0327, max_relative = 1e-14);
        assert_relative_eq!(b.phi_hi, 0.4432, max_relative = 1e-14);
        assert_eq!(b.pb_lo, 0.0);
        assert_relative_eq!(b.pb_hi, battery_chemical_power(5.0, &params).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(r_max(&QuadMap::IDENTITY, &params).unwrap(), 16.071_428_571_4, max_relative = 1e-10);
    }

    #[test]
    fn parallel_bound_clipped_by_rmax() {
        let mut params = PowertrainParams::default();
        params.battery_voltage = 600.0; // U^2/4R = 2.571 MW < 5 MW motor limit
        let id = QuadMap::IDENTITY;
        let beta = QuadMap::new(0.0, 0.0821, 0.0327);
        let b = step_bounds(&id, &id, &beta, &params, Topology::Parallel, None, 0).unwrap();
        assert_relative_eq!(b.pb_hi, params.max_chemical_power(), max_relative = 1e-12);
    }

    #[test]
    fn series_bounds_min_selection() {
        let mut params = PowertrainParams::default();
        let b = identity_bounds(Topology::Series);
        // identity maps: lower = g(0 - 5), upper = g(5 - 0)
        assert_relative_eq!(b.pb_lo, battery_chemical_power(-5.0, &params).unwrap(), max_relative = 1e-14);
        assert_relative_eq!(b.pb_hi, battery_chemical_power(5.0, &params).unwrap(), max_relative = 1e-14);
        params.em_power_range = Range::new(0.0, 40.0);
        let id = QuadMap::IDENTITY;
        let beta = QuadMap::new(0.0, 0.0821, 0.0327);
        let b = step_bounds(&id, &id, &beta, &params, Topology::Series, None, 0).unwrap();
        assert_relative_eq!(b.pb_hi, 32.142_857_142_857, max_relative = 1e-12);
    }

    #[test]
    fn gas_turbine_cap_lowers_fuel_ceiling() {
        let params = PowertrainParams::default();
        let id = QuadMap::IDENTITY;
        let beta = QuadMap::new(0.0, 0.0821, 0.0327);
        let b = step_bounds(&id, &id, &beta, &params, Topology::Parallel, Some(3.0), 0).unwrap();
        assert_relative_eq!(b.phi_hi, 0.0327 + 3.0 * 0.0821, max_relative = 1e-14);
    }

    #[test]
    fn infeasible_bounds_reported() {
        let mut params = PowertrainParams::default();
        params.em_power_range = Range::new(20.0, 25.0);
        let id = QuadMap::IDENTITY;
        let beta = QuadMap::new(0.0, 0.0821, 0.0327);
        let err = step_bounds(&id, &id, &beta, &params, Topology::Parallel, None, 3).unwrap_err();
        assert!(matches!(err, Error::InfeasibleBounds { step: 3, .. }));
    }

    use crate::models::Range;

    fn mission() -> FlightProfile {
        let n = 20;
        let h: Vec<f64> = (0..=n).map(|i| 300.0 * (i.min(10)) as f64).collect();
        let v: Vec<f64> = (0..=n).map(|i| 170.0 + i as f64).collect();
        FlightProfile::from_altitude_speed(60.0, 0.0, &h, &v).unwrap()
    }

    #[test]
    fn schedule_constant_for_single_speed_table() {
        let params = PowertrainParams::default();
        let row = LossTable::synthetic().rows()[0];
        let tables = Tables { losses: LossTable::new(vec![row]).unwrap(), fan: FanMapTable::synthetic() };
        let s = build_schedule(&mission(), &tables, &params, 42_000.0, ScheduleOptions::default()).unwrap();
        assert_eq!(s.len(), 20);
        assert!(s.steps.iter().all(|st| st.kappa == row.motor && st.beta == row.fuel));
        assert!(s.steps.iter().all(|st| st.beta == QuadMap::new(0.0, 0.0821, 0.0327)));
    }

    #[test]
    fn series_speed_tie() {
        let mut params = PowertrainParams::default();
        params.topology = Topology::Series;
        let s = build_schedule(&mission(), &Tables::default(), &params, 42_000.0, ScheduleOptions::default()).unwrap();
        assert!(s.steps.iter().all(|st| st.omega_gt == st.omega_drv));
        let opts = ScheduleOptions { series_speed_ratio: 1.5, ..Default::default() };
        let s = build_schedule(&mission(), &Tables::default(), &params, 42_000.0, opts).unwrap();
        assert!(s.steps.iter().all(|st| (st.omega_gt - 1.5 * st.omega_drv).abs() < 1e-12));
    }

    #[test]
    fn schedule_coverage_error() {
        let params = PowertrainParams::default();
        let row = LossTable::synthetic().rows()[0];
        let narrow = LossTable::new(vec![LossRow { omega: 10.0, ..row }, LossRow { omega: 20.0, ..row }]).unwrap();
        let tables = Tables { losses: narrow, fan: FanMapTable::synthetic() };
        let err = build_schedule(&mission(), &tables, &params, 42_000.0, ScheduleOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Coverage { step: 0, .. }));
    }

    #[test]
    fn schedule_is_deterministic() {
        let params = PowertrainParams::default();
        let a = build_schedule(&mission(), &Tables::default(), &params, 42_000.0, ScheduleOptions::default()).unwrap();
        let b = build_schedule(&mission(), &Tables::default(), &params, 42_000.0, ScheduleOptions::default()).unwrap();
        assert_eq!(a, b);
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(x.bounds.pb_hi.to_bits(), y.bounds.pb_hi.to_bits());
            assert_eq!(x.eta.eta1.to_bits(), y.eta.eta1.to_bits());
        }
    }
}
