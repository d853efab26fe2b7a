//! Versioned JSON experiment configuration.

use std::path::{Path, PathBuf};

use levyfbsde_core::bsde_engine::{SolveConfig, SpaceGrid};
use levyfbsde_core::gradient_estimator::{BelConfig, FdConfig, NoSmallJumpsPolicy};
use levyfbsde_core::levy_model::{Amplitude, StableLikeMeasure};
use levyfbsde_core::malliavin_weights::EpsSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// A configuration that cannot be used; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AmplitudeConfig {
    Constant { value: f64 },
    CosineBump { kappa: f64 },
    Tilted { kappa: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    pub dim: usize,
    pub beta: f64,
    pub amplitude: AmplitudeConfig,
    pub truncation_radius: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self { dim: 1, beta: 1.5, amplitude: AmplitudeConfig::Constant { value: 1.0 }, truncation_radius: 0.05 }
    }
}

impl MeasureConfig {
    pub fn build(&self) -> Result<StableLikeMeasure, ConfigError> {
        if !(self.beta > 0.0 && self.beta < 2.0) {
            return bad(format!("beta = {} must lie in (0, 2)", self.beta));
        }
        if !(1..=2).contains(&self.dim) {
            return bad(format!("dim = {} is not supported (1 or 2)", self.dim));
        }
        let amplitude = match self.amplitude {
            AmplitudeConfig::Constant { value } => Amplitude::Constant(value),
            AmplitudeConfig::CosineBump { kappa } => Amplitude::CosineBump { kappa },
            AmplitudeConfig::Tilted { kappa } => Amplitude::Tilted { kappa },
        };
        StableLikeMeasure::new(self.dim, self.beta, amplitude, self.truncation_radius).map_err(|e| ConfigError(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForwardParams {
    pub s0: f64,
    pub theta: f64,
}

impl Default for ForwardParams {
    fn default() -> Self {
        Self { s0: 1.0, theta: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    pub t: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        Self { t: 0.0, horizon: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleConfig {
    FixedHorizon,
    Singular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub time_nodes: usize,
    pub schedule: ScheduleConfig,
    /// Overrides `schedule` with a constant cutoff scale.
    pub fixed_epsilon: Option<f64>,
    pub drop_no_small_jumps: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 4,
            time_nodes: 16,
            schedule: ScheduleConfig::FixedHorizon,
            fixed_epsilon: None,
            drop_no_small_jumps: false,
        }
    }
}

impl EstimatorConfig {
    pub fn schedule(&self) -> EpsSchedule {
        match (self.fixed_epsilon, self.schedule) {
            (Some(e), _) => EpsSchedule::Fixed(e),
            (None, ScheduleConfig::FixedHorizon) => EpsSchedule::FixedHorizon,
            (None, ScheduleConfig::Singular) => EpsSchedule::Singular,
        }
    }

    pub fn bel(&self) -> BelConfig {
        BelConfig {
            schedule: self.schedule(),
            n_paths: self.n_paths,
            n_steps: self.n_steps,
            time_nodes: self.time_nodes,
            policy: if self.drop_no_small_jumps { NoSmallJumpsPolicy::DropAndReweight } else { NoSmallJumpsPolicy::Resample },
            ..BelConfig::default()
        }
    }

    pub fn fd(&self) -> FdConfig {
        FdConfig { delta: None, n_paths: self.n_paths, n_steps: self.n_steps, time_nodes: self.time_nodes }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub half_width: f64,
    pub nodes_per_axis: usize,
    pub slices: usize,
    pub paths_per_node: usize,
    pub steps_per_slice: usize,
    pub iterates_max: usize,
    pub tol: f64,
    pub sub_intervals: usize,
    /// Nodes of the deterministic solver (d = 1 only; 0 skips it).
    pub deterministic_nodes: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            half_width: 4.0,
            nodes_per_axis: 33,
            slices: 10,
            paths_per_node: 1000,
            steps_per_slice: 2,
            iterates_max: 30,
            tol: 1e-6,
            sub_intervals: 1,
            deterministic_nodes: 161,
        }
    }
}

impl GridConfig {
    pub fn solve_config(&self, horizon: f64) -> Result<SolveConfig, ConfigError> {
        let grid = SpaceGrid::new(self.half_width, self.nodes_per_axis).map_err(|e| ConfigError(e.to_string()))?;
        let mut cfg = SolveConfig::new(horizon, grid);
        cfg.slices = self.slices;
        cfg.paths_per_node = self.paths_per_node;
        cfg.steps_per_slice = self.steps_per_slice;
        cfg.iterates_max = self.iterates_max;
        cfg.tol = self.tol;
        cfg.sub_intervals = self.sub_intervals;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub measure: MeasureConfig,
    /// `+`-separated registry entries, e.g. `additive+linear-driver:0.5+kinked-terminal`.
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default)]
    pub forward: ForwardParams,
    #[serde(default)]
    pub horizon: HorizonConfig,
    /// Evaluation point; the origin when absent.
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    /// Gradient direction; `e_1` when absent.
    #[serde(default)]
    pub h: Option<Vec<f64>>,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_model() -> String {
    "additive".into()
}

impl ExperimentConfig {
    /// The configuration `verify` uses when none is given.
    pub fn reference(seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            measure: MeasureConfig::default(),
            model: default_model(),
            forward: ForwardParams::default(),
            horizon: HorizonConfig::default(),
            x: None,
            h: None,
            estimator: EstimatorConfig { n_paths: 100_000, ..EstimatorConfig::default() },
            grid: GridConfig::default(),
            output: None,
        }
    }

    /// Parses and validates, with `seed` taking precedence over the file.
    pub fn from_json(text: &str, seed: Option<u64>) -> Result<Self, ConfigError> {
        let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        if let (Some(s), Some(obj)) = (seed, value.as_object_mut()) {
            obj.insert("seed".into(), s.into());
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, seed)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} is not {SCHEMA_VERSION}", self.schema_version));
        }
        self.measure.build()?;
        if !(self.horizon.t < self.horizon.horizon) {
            return bad("horizon needs t < T");
        }
        let d = self.measure.dim;
        for (name, v) in [("x", &self.x), ("h", &self.h)] {
            if let Some(v) = v {
                if v.len() != d {
                    return bad(format!("{name} has {} entries, the state has {d}", v.len()));
                }
            }
        }
        if self.estimator.n_paths == 0 || self.estimator.n_steps == 0 || self.estimator.time_nodes == 0 {
            return bad("estimator sizes must be positive");
        }
        if self.grid.slices == 0 || self.grid.paths_per_node == 0 {
            return bad("grid sizes must be positive");
        }
        crate::registry::parse(&self.model, d)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }

    pub fn point(&self) -> Vec<f64> {
        self.x.clone().unwrap_or_else(|| vec![0.0; self.measure.dim])
    }

    pub fn direction(&self) -> Vec<f64> {
        self.h.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.measure.dim];
            e[0] = 1.0;
            e
        })
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
