//! Experiment configuration: one TOML document with a table per concern.
//!
//! Loading layers a user file over the built-in defaults table by table, so
//! a file only needs the keys it changes; command-line overrides are applied
//! on the resulting struct by the caller.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::horizon::HeuristicPolicy;
use crate::powertrain::{BatteryParams, EngineMap, MotorMap, Powertrain, VehicleParams};
use crate::scenario::SyntheticRouteConfig;
use crate::solver::AdmmConfig;

/// The canonical default configuration.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../config/default.toml");

/// Environment variable naming a config file used when none is given.
pub const CONFIG_ENV_VAR: &str = "SMPC_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub brake_fraction: f64,
    /// m/s; defaults to thresholds spread uniformly over `[0, 35]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gear_speed_thresholds: Option<Vec<f64>>,
    /// rad/s; defaults to the vehicle's engine minimum speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine_min_speed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Decay rate of the live-measurement weight in the blend, per step.
    pub blend_decay: f64,
    /// Optional cap on the prediction horizon, steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_cap: Option<usize>,
    /// Use at most this many journeys as scenarios (first in database order).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_scenarios: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub initial_soc_percent: f64,
    /// Initialise each update from the previous update's shifted solution.
    pub warm_start: bool,
    /// Iteration budget of each closed-loop update; overrides
    /// `admm.max_iterations` inside simulations. An update that runs out
    /// applies its last iterate and is flagged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iterations_per_update: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConfigFile", into = "ConfigFile")]
pub struct ExperimentConfig {
    pub powertrain: Powertrain,
    pub policy_config: PolicyConfig,
    pub admm: AdmmConfig,
    pub scenario: ScenarioConfig,
    pub simulation: SimulationConfig,
    pub synthetic: SyntheticRouteConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    vehicle: VehicleParams,
    engine: EngineMap,
    motor: MotorMap,
    battery: BatteryParams,
    policy: PolicyConfig,
    admm: AdmmConfig,
    scenario: ScenarioConfig,
    simulation: SimulationConfig,
    synthetic: SyntheticRouteConfig,
}

impl TryFrom<ConfigFile> for ExperimentConfig {
    type Error = Error;
    fn try_from(f: ConfigFile) -> Result<Self> {
        let cfg = ExperimentConfig {
            powertrain: Powertrain { vehicle: f.vehicle, engine: f.engine, motor: f.motor, battery: f.battery },
            policy_config: f.policy,
            admm: f.admm,
            scenario: f.scenario,
            simulation: f.simulation,
            synthetic: f.synthetic,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<ExperimentConfig> for ConfigFile {
    fn from(c: ExperimentConfig) -> Self {
        let pt = c.powertrain;
        ConfigFile {
            vehicle: pt.vehicle,
            engine: pt.engine,
            motor: pt.motor,
            battery: pt.battery,
            policy: c.policy_config,
            admm: c.admm,
            scenario: c.scenario,
            simulation: c.simulation,
            synthetic: c.synthetic,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_toml_str("").expect("built-in default configuration is valid")
    }
}

/// Recursively overlay `top` onto `base`; tables merge, everything else is
/// replaced.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl ExperimentConfig {
    /// Parse `text` as overrides of the built-in defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut base: toml::Table = toml::from_str(DEFAULT_CONFIG_TOML)?;
        let top: toml::Table = toml::from_str(text)?;
        merge(&mut base, top);
        Ok(toml::Value::Table(base).try_into()?)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data { path: path.to_owned(), reason: e.to_string() })?;
        Self::from_toml_str(&text).map_err(|e| Error::Data { path: path.to_owned(), reason: e.to_string() })
    }

    /// Load `path`, else the file named by [`CONFIG_ENV_VAR`], else defaults.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from);
        match path.map(Path::to_owned).or(env_path) {
            Some(p) => Self::from_file(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    pub fn policy(&self) -> HeuristicPolicy {
        let vehicle = &self.powertrain.vehicle;
        let mut pol = HeuristicPolicy::default_for(vehicle, self.policy_config.brake_fraction);
        if let Some(t) = &self.policy_config.gear_speed_thresholds {
            pol.gear_speed_thresholds.clone_from(t);
        }
        if let Some(w) = self.policy_config.engine_min_speed {
            pol.engine_min_speed = w;
        }
        pol
    }

    /// Initial battery energy, J.
    pub fn initial_energy(&self) -> f64 {
        self.powertrain.battery.capacity * self.simulation.initial_soc_percent / 100.0
    }

    pub fn validate(&self) -> Result<()> {
        self.powertrain.validate()?;
        self.policy().validate(&self.powertrain.vehicle)?;
        self.admm.validate()?;
        self.synthetic.validate()?;
        if !(self.scenario.blend_decay >= 0.0 && self.scenario.blend_decay.is_finite()) {
            return Err(Error::invalid("scenario.blend_decay must be non-negative"));
        }
        if self.simulation.max_iterations_per_update == Some(0) {
            return Err(Error::invalid("simulation.max_iterations_per_update must be positive"));
        }
        if self.scenario.horizon_cap == Some(0) || self.scenario.max_scenarios == Some(0) {
            return Err(Error::invalid("scenario caps must be positive"));
        }
        let b = &self.powertrain.battery;
        let x0 = self.initial_energy();
        if !(b.soc_min..=b.soc_max).contains(&x0) {
            return Err(Error::invalid(format!(
                "initial SOC {}% lies outside the battery window",
                self.simulation.initial_soc_percent
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_reproduce_headline_sizes() {
        let c = ExperimentConfig::default();
        let pt = &c.powertrain;
        assert_eq!(pt.vehicle.mass, 1800.0);
        assert_eq!(pt.vehicle.engine_power_max, 100_000.0);
        assert_eq!(pt.vehicle.motor_power_max, 50_000.0);
        assert_relative_eq!(pt.battery.capacity, 21.5 * 3600.0 * 300.0, max_relative = 1e-12);
        assert_relative_eq!(pt.battery.percent(pt.battery.soc_min), 40.0, max_relative = 1e-12);
        assert_relative_eq!(pt.battery.percent(c.initial_energy()), 60.0, max_relative = 1e-12);
        assert_eq!(c.admm.rho1, 2.34e-4);
        assert_eq!(c.admm.rho2, 8.86e-9);
        assert_eq!(c.admm.rho3, c.admm.rho1);
        assert_eq!(c.admm.epsilon, 0.1);
        assert_eq!(c.policy().brake_fraction, 0.5);
    }

    #[test]
    fn partial_file_overrides_single_keys() {
        let c = ExperimentConfig::from_toml_str("[vehicle]\nmass = 1500.0\n[admm]\nepsilon = 0.01\n").unwrap();
        assert_eq!(c.powertrain.vehicle.mass, 1500.0);
        assert_eq!(c.powertrain.vehicle.frontal_area, 2.3);
        assert_eq!(c.admm.epsilon, 0.01);
        assert_eq!(c.admm.rho1, 2.34e-4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[vehicle]\nmas = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[vehicel]\nmass = 1.0\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[policy]\nbrake_fraction = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[engine]\nalpha2 = [0.0, 1.4e-13, 1.2e-13, 1.0e-13, 0.9e-13, 0.85e-13, 0.8e-13]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[simulation]\ninitial_soc_percent = 20.0\n").is_err());
    }

    #[test]
    fn serialisation_round_trip() {
        let c = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back.powertrain.vehicle, c.powertrain.vehicle);
        assert_eq!(back.admm, c.admm);
        assert_eq!(back.policy(), c.policy());
        assert_relative_eq!(back.powertrain.battery.capacity, c.powertrain.battery.capacity, max_relative = 1e-12);
    }
}
