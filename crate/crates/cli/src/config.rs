use std::path::{Path, PathBuf};

use exploration_mfg::{
    Error, GridSpec, InitialDistribution, LambdaSchedule, ModelParams, SimConfig, SolverSettings,
};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

/// Everything a run depends on. Defaults reproduce the reference calibration, so an
/// empty file is a valid configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub schedule: LambdaSchedule,
    pub initial: InitialDistribution,
    pub grid: GridConfig,
    pub solver: SolverSettings,
    pub sim: SimConfig,
    pub stationary: StationaryConfig,
    pub fluid: FluidSection,
    pub sweep: SweepConfig,
    pub validate: ValidateConfig,
    pub output: OutputConfig,
    /// Worker threads for sweeps and particle simulation.
    pub jobs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelParams::reference(),
            schedule: LambdaSchedule::default(),
            initial: InitialDistribution::default(),
            grid: GridConfig::default(),
            solver: SolverSettings::default(),
            sim: SimConfig::default(),
            stationary: StationaryConfig::default(),
            fluid: FluidSection::default(),
            sweep: SweepConfig::default(),
            validate: ValidateConfig::default(),
            output: OutputConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub x_max: f64,
    pub dx: f64,
    /// Defaults to half the CFL bound when absent.
    pub dt: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            x_max: 120.0,
            dx: 0.1,
            dt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationaryConfig {
    pub lambda: f64,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluidSection {
    pub lambda: f64,
    pub epsilon: f64,
}

impl Default for FluidSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub epsilons: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: vec![0.02, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0],
            epsilons: vec![0.0, 0.25, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Initial reserves at which the policy value is estimated by simulation.
    pub x0: Vec<f64>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            x0: vec![0.0, 5.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Time-node stride for surface CSVs.
    pub surface_stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            surface_stride: 50,
        }
    }
}

impl RunConfig {
    /// Reads TOML, JSON, or a previous run's manifest (whose `config` key is used).
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::validation("config", format!("{}: {e}", path.display())))?;
        let is_json =
            path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
        if is_json {
            let mut value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| Failure::validation("config", e.to_string()))?;
            if let Some(inner) = value.get_mut("config") {
                value = inner.take();
            }
            serde_path_to_error::deserialize(value).map_err(path_failure)
        } else {
            let de = toml::Deserializer::new(&text);
            serde_path_to_error::deserialize(de).map_err(path_failure)
        }
    }

    pub fn validate(&self) -> Result<GridSpec, Failure> {
        section("model", self.model.validate())?;
        section("schedule", self.schedule.validate())?;
        section("initial", self.initial.validate())?;
        section("solver", self.solver.validate())?;
        section("sim", self.sim.validate())?;
        if self.jobs == 0 {
            return Err(Failure::validation("jobs", "must be >= 1"));
        }
        if self.output.surface_stride == 0 {
            return Err(Failure::validation("output.surface_stride", "must be >= 1"));
        }
        if !(self.stationary.lambda >= 0.0) {
            return Err(Failure::validation("stationary.lambda", "must be >= 0"));
        }
        if !(self.fluid.lambda >= 0.0) {
            return Err(Failure::validation("fluid.lambda", "must be >= 0"));
        }
        if !(self.fluid.epsilon >= 0.0) {
            return Err(Failure::validation("fluid.epsilon", "must be >= 0"));
        }
        if let Some(l) = self.sweep.lambdas.iter().find(|l| !(**l >= 0.0)) {
            return Err(Failure::validation(
                "sweep.lambdas",
                format!("{l} is not >= 0"),
            ));
        }
        if let Some(e) = self.sweep.epsilons.iter().find(|e| !(**e >= 0.0)) {
            return Err(Failure::validation(
                "sweep.epsilons",
                format!("{e} is not >= 0"),
            ));
        }
        if let Some(x) = self
            .validate
            .x0
            .iter()
            .find(|x| !(**x >= 0.0 && **x <= self.grid.x_max))
        {
            return Err(Failure::validation(
                "validate.x0",
                format!("{x} is outside the grid"),
            ));
        }
        section(
            "grid",
            GridSpec::build(&self.model, self.grid.x_max, self.grid.dx, self.grid.dt),
        )
    }
}

fn path_failure<E: std::fmt::Display>(e: serde_path_to_error::Error<E>) -> Failure {
    let path = e.path().to_string();
    let field = if path == "." {
        "config".to_string()
    } else {
        path
    };
    Failure::validation(field, e.inner().to_string().trim().to_string())
}

/// Qualifies a field name with its config section unless it already carries one.
fn section<T>(name: &str, result: exploration_mfg::Result<T>) -> Result<T, Failure> {
    result.map_err(|e| match e {
        Error::InvalidParameter { field, reason } => {
            let field = if field.starts_with(&format!("{name}.")) {
                field
            } else {
                format!("{name}.{field}")
            };
            Failure::validation(field, reason)
        }
        other => Failure::from(other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_the_reference_run() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.model, ModelParams::reference());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nprice = 4.0\n").is_err());
    }

    #[test]
    fn model_errors_are_qualified() {
        let mut c = RunConfig::default();
        c.model.production_cost.quadratic = 0.0;
        match c.validate() {
            Err(Failure::Validation { field, .. }) => {
                assert_eq!(field, "model.production_cost.quadratic")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schedule_errors_keep_their_prefix() {
        let c = RunConfig {
            schedule: LambdaSchedule::constant(-1.0),
            ..Default::default()
        };
        match c.validate() {
            Err(Failure::Validation { field, .. }) => assert_eq!(field, "schedule.rate"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
