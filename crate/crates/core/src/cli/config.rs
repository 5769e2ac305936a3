//! Run configuration: one TOML file, strict about unknown keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::{q_ladder, EntropyKind, DEFAULT_LADDER_BETA};
use crate::error::{Error, Result};
use crate::evolve::{EvolveConfig, InitialCondition, Scheme};
use crate::grid::Grid;
use crate::model::ModelParams;
use crate::steady::SteadyMethod;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub diagnostics: DiagnosticsConfig,
    pub output: OutputConfig,
    /// Required by `evolve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    /// Required by `sweep`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_v: usize,
    pub n_g: usize,
    #[serde(default = "default_tail_widths")]
    pub tail_widths: f64,
}

fn default_tail_widths() -> f64 {
    8.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_method")]
    pub method: SteadyMethod,
    /// Residual bound for the steady solve.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Pseudo-time step of the marching steady solver.
    #[serde(default = "default_march_dt")]
    pub march_dt: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Time step of `evolve`.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_method() -> SteadyMethod {
    SteadyMethod::Nullspace
}
fn default_tol() -> f64 {
    1e-11
}
fn default_max_iter() -> usize {
    200
}
fn default_march_dt() -> f64 {
    1.0
}
fn default_max_steps() -> usize {
    100_000
}
fn default_dt() -> f64 {
    0.05
}
fn default_t_end() -> f64 {
    5.0
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: default_method(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            march_dt: default_march_dt(),
            max_steps: default_max_steps(),
            dt: default_dt(),
            t_end: default_t_end(),
            scheme: Scheme::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_beta")]
    pub ladder_beta: f64,
    /// Number of rungs `k = 0..ladder_levels`.
    #[serde(default = "default_levels")]
    pub ladder_levels: usize,
    #[serde(default = "default_h_tags")]
    pub h_tags: Vec<EntropyKind>,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// `evolve` passes when the final `∬ (p/p* - 1)² p*` is below this.
    #[serde(default = "default_distance")]
    pub distance_threshold: f64,
}

fn default_beta() -> f64 {
    DEFAULT_LADDER_BETA
}
fn default_levels() -> usize {
    9
}
fn default_h_tags() -> Vec<EntropyKind> {
    EntropyKind::ALL.to_vec()
}
fn default_stride() -> usize {
    10
}
fn default_distance() -> f64 {
    1e-6
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            ladder_beta: default_beta(),
            ladder_levels: default_levels(),
            h_tags: default_h_tags(),
            snapshot_stride: default_stride(),
            distance_threshold: default_distance(),
        }
    }
}

impl DiagnosticsConfig {
    pub fn ladder(&self) -> Vec<f64> {
        q_ladder(self.ladder_beta, self.ladder_levels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Snapshot,
    Csv,
    Json,
    /// Generator in coordinate format.
    Coo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![
        OutputFormat::Snapshot,
        OutputFormat::Csv,
        OutputFormat::Json,
    ]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: default_directory(),
            formats: default_formats(),
        }
    }
}

impl OutputConfig {
    pub fn wants(&self, format: OutputFormat) -> bool {
        self.formats.contains(&format)
    }
}

/// Property battery settings for `verify`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Random envelope trajectories checked for the comparison principle.
    pub trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub c_plus_min: f64,
    pub c_plus_max: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            trajectories: 10,
            steps: 40,
            dt: 0.05,
            c_plus_min: 1.5,
            c_plus_max: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    A,
    SigmaE,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::A => "a",
            SweepParameter::SigmaE => "sigma_e",
        }
    }

    pub fn apply(self, params: &ModelParams, value: f64) -> ModelParams {
        let mut p = *params;
        match self {
            SweepParameter::A => p.a = value,
            SweepParameter::SigmaE => p.sigma_e = value,
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks everything that can be checked before any solve.
    pub fn validate(&self) -> Result<()> {
        self.build_grid()?;
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol <= 1e-6) {
            return Err(Error::Config(format!(
                "solver.tol must lie in (0, 1e-6], got {}",
                s.tol
            )));
        }
        if !(s.march_dt > 0.0) {
            return Err(Error::Config(format!(
                "solver.march_dt must be positive, got {}",
                s.march_dt
            )));
        }
        let d = &self.diagnostics;
        if !(d.ladder_beta > 1.0) || d.ladder_levels == 0 {
            return Err(Error::Config(
                "diagnostics ladder needs ladder_beta > 1 and ladder_levels >= 1".into(),
            ));
        }
        if d.h_tags.is_empty() {
            return Err(Error::Config("diagnostics.h_tags is empty".into()));
        }
        if !(d.distance_threshold > 0.0) {
            return Err(Error::Config(
                "diagnostics.distance_threshold must be positive".into(),
            ));
        }
        self.evolve_config().validate()?;
        if let Some(v) = &self.verify {
            if v.trajectories == 0 || v.steps == 0 || !(v.dt > 0.0) {
                return Err(Error::Config(
                    "verify needs trajectories, steps and dt positive".into(),
                ));
            }
            if !(1.0 <= v.c_plus_min && v.c_plus_min <= v.c_plus_max) {
                return Err(Error::Config(
                    "verify needs 1 <= c_plus_min <= c_plus_max".into(),
                ));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep.values is empty".into()));
            }
            if let Some(v) = sweep.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("sweep value {v} is not positive")));
            }
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<Grid> {
        self.grid_for(&self.model)
    }

    pub fn grid_for(&self, params: &ModelParams) -> Result<Grid> {
        Grid::build(params, self.grid.n_v, self.grid.n_g, self.grid.tail_widths)
    }

    pub fn evolve_config(&self) -> EvolveConfig {
        EvolveConfig {
            dt: self.solver.dt,
            t_end: self.solver.t_end,
            scheme: self.solver.scheme,
            snapshot_stride: self.diagnostics.snapshot_stride,
        }
    }

    pub fn verify_config(&self) -> VerifyConfig {
        self.verify.unwrap_or_default()
    }
}
