//! Scenario documents.
//!
//! A scenario is a TOML file. Every key is optional except `schema-version`;
//! omitted keys take the reference aircraft defaults and unknown keys are
//! rejected. Relative paths resolve against the scenario file's directory.

use std::path::{Path, PathBuf};

use hybrid_ems::admm::SolverOptions;
use hybrid_ems::models::PowertrainParams;
use hybrid_ems::mpc::{Scenario, Strategy};
use hybrid_ems::schedule::{
    default_profile, load_flight_profile, FanMapTable, LossTable, ScheduleOptions, Tables,
};
use hybrid_ems::Error;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

pub const SCHEMA_VERSION: u32 = 1;

/// Mach number the shipped fan map is tabulated at.
pub const DEFAULT_FAN_MAP_MACH: f64 = 0.55;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(rename = "schema-version")]
    pub schema_version: u32,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Sampling interval, s.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Seed for randomized sweeps.
    #[serde(default)]
    pub seed: u64,
    /// Energy recovery efficiency on negative-drive steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub windmilling: Option<f64>,
    /// Aircraft take-off mass, kg; defaults to MTOW.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_mass: Option<f64>,
    /// Stored energy per system at take-off, MJ; defaults to the SOC ceiling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_energy: Option<f64>,
    #[serde(default)]
    pub paths: DataPaths,
    #[serde(default)]
    pub params: PowertrainParams,
    #[serde(default)]
    pub schedule: ScheduleOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub sweep: SweepSection,
}

/// Data files; each falls back to the shipped synthetic data when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profile: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub losses: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fan_map: Option<PathBuf>,
    pub fan_map_mach: f64,
}

impl Default for DataPaths {
    fn default() -> Self {
        Self { profile: None, losses: None, fan_map: None, fan_map_mach: DEFAULT_FAN_MAP_MACH }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    pub values: Vec<f64>,
    /// Duality-gap tolerance of the barrier reference solve.
    pub barrier_tol: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self { axis: None, values: Vec::new(), barrier_tol: 1e-6 }
    }
}

fn default_strategy() -> Strategy {
    Strategy::AdmmVariableMass
}

fn default_delta() -> f64 {
    60.0
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            strategy: default_strategy(),
            delta: default_delta(),
            seed: 0,
            windmilling: None,
            initial_mass: None,
            initial_energy: None,
            paths: DataPaths::default(),
            params: PowertrainParams::default(),
            schedule: ScheduleOptions::default(),
            solver: SolverOptions::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: schema-version {} is not supported (expected {SCHEMA_VERSION})",
                origin.display(),
                file.schema_version
            ))
            .into());
        }
        if !(file.delta > 0.0) {
            return Err(Error::Config(format!("sampling interval {} s must be positive", file.delta)).into());
        }
        Ok(file)
    }

    /// Read and rebase relative data paths onto the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut file = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.paths.profile, &mut file.paths.losses, &mut file.paths.fan_map].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(file)
    }

    /// The file at `path`, or the defaults when no file is given.
    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Load data files and check the resulting scenario.
    pub fn resolve(&self) -> CliResult<Scenario> {
        let profile = match &self.paths.profile {
            Some(p) => load_flight_profile(p, self.delta)?,
            None => default_profile(self.delta)?,
        };
        let defaults = Tables::default();
        let losses = match &self.paths.losses {
            Some(p) => LossTable::load(p)?,
            None => defaults.losses,
        };
        let fan = match &self.paths.fan_map {
            Some(p) => FanMapTable::load(p, self.paths.fan_map_mach)?,
            None if self.paths.fan_map_mach == DEFAULT_FAN_MAP_MACH => defaults.fan,
            None => FanMapTable::parse_csv(hybrid_ems::schedule::DEFAULT_FAN_MAP_CSV, self.paths.fan_map_mach)?,
        };
        let mut sc = Scenario::new(self.params.clone(), profile, Tables { losses, fan }, self.strategy);
        sc.windmilling = self.windmilling;
        sc.schedule = self.schedule;
        sc.solver = self.solver;
        sc.initial_mass = self.initial_mass;
        sc.initial_energy = self.initial_energy;
        sc.validate()?;
        Ok(sc)
    }
}
