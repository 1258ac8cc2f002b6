//! Scenario files: one JSON document per batch run, validated before any
//! computation.

use std::path::Path;

use catdisp_core::classification::{DEFAULT_BURN_IN, DEFAULT_HORIZON, DEFAULT_VARYING_TOL};
use catdisp_core::simulator::DEFAULT_SURVIVAL_CAP;
use catdisp_core::{DispersalKind, EnvironmentFamily, EnvironmentProcess, GrowthKind, KernelKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GENERATIONS: u32 = 200;
pub const DEFAULT_REPLICATES: u32 = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    pub growth: GrowthKind,
    pub kernel: KernelKind,
    #[serde(default)]
    pub mechanism: MechanismSpec,
    pub environment: EnvironmentFamily,
    #[serde(default)]
    pub classification: ClassificationOptions,
    #[serde(default)]
    pub simulation: SimulationOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_table: Option<MeanTableOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum MechanismSpec {
    #[default]
    #[serde(rename = "all")]
    All,
    #[serde(untagged)]
    One(DispersalKind),
}

impl MechanismSpec {
    pub fn kinds(self) -> Vec<DispersalKind> {
        match self {
            Self::All => DispersalKind::ALL.to_vec(),
            Self::One(k) => vec![k],
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifyMethod {
    /// Analytic when a theorem applies, numeric otherwise.
    #[default]
    Auto,
    Analytic,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassificationOptions {
    /// Generations of a deterministic trace, or steps of an ergodic path.
    pub horizon: usize,
    /// Band around zero for numeric drift estimates of deterministic traces.
    pub tol: f64,
    pub method: ClassifyMethod,
    /// Discarded prefix of adaptive survival chains.
    pub burn_in: usize,
}

impl Default for ClassificationOptions {
    fn default() -> Self {
        ClassificationOptions {
            horizon: DEFAULT_HORIZON,
            tol: DEFAULT_VARYING_TOL,
            method: ClassifyMethod::Auto,
            burn_in: DEFAULT_BURN_IN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationOptions {
    pub generations: u32,
    pub replicates: u32,
    pub survival_cap: u64,
    pub seed: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            generations: DEFAULT_GENERATIONS,
            replicates: DEFAULT_REPLICATES,
            survival_cap: DEFAULT_SURVIVAL_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanTableOptions {
    /// Generations listed for deterministic families.
    pub generations: u64,
}

/// Replaces one numeric field of the environment with each listed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// One validated environment process of the scenario grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    /// Swept value, if the scenario has a sweep.
    pub value: Option<f64>,
    pub process: EnvironmentProcess,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| CliError::BadInput(format!("scenario: {e}")))?;
        if scenario.schema_version != SCHEMA_VERSION {
            return Err(CliError::BadInput(format!(
                "scenario: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                scenario.schema_version
            )));
        }
        // validates every grid point up front
        scenario.grid()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::BadInput(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn grid(&self) -> Result<Vec<GridPoint>, CliError> {
        let Some(sweep) = &self.sweep else {
            let process = EnvironmentProcess::new(self.growth, self.kernel, self.environment.clone())?;
            return Ok(vec![GridPoint { index: 0, value: None, process }]);
        };
        if sweep.values.is_empty() {
            return Err(CliError::BadInput("sweep: values must not be empty".into()));
        }
        let base = serde_json::to_value(&self.environment).expect("environment serializes");
        sweep
            .values
            .iter()
            .enumerate()
            .map(|(index, &v)| {
                let family = substitute(&base, &sweep.parameter, v)?;
                let process = EnvironmentProcess::new(self.growth, self.kernel, family)?;
                Ok(GridPoint { index, value: Some(v), process })
            })
            .collect()
    }
}

fn substitute(base: &Value, parameter: &str, v: f64) -> Result<EnvironmentFamily, CliError> {
    let mut family = base.clone();
    let slot = family
        .as_object_mut()
        .and_then(|o| o.get_mut(parameter))
        .filter(|s| s.is_number())
        .ok_or_else(|| CliError::BadInput(format!("sweep: environment has no numeric field {parameter:?}")))?;
    *slot = if slot.is_u64() {
        if !(v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64) {
            return Err(CliError::BadInput(format!("sweep: {parameter} takes nonnegative integers (got {v})")));
        }
        Value::from(v as u64)
    } else {
        serde_json::Number::from_f64(v)
            .map(Value::Number)
            .ok_or_else(|| CliError::BadInput(format!("sweep: {parameter} value must be finite")))?
    };
    serde_json::from_value(family).map_err(|e| CliError::BadInput(format!("sweep: {e}")))
}
