//! Experiment configuration: JSON schema, validation with enumerated
//! errors, and the mapping onto the library's run configurations.

use serde::{Deserialize, Serialize};
use std::path::Path;

use gpslab_core::baselines::{BaselineConfig, BaselineMethod};
use gpslab_core::gps::GpsConfig;
use gpslab_core::envs::TaskSpec;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gps,
    Cem,
    Rwr,
}

/// Network architecture description for the policy mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpecConfig {
    pub hidden: Vec<usize>,
}

impl Default for PolicySpecConfig {
    fn default() -> Self {
        Self { hidden: vec![64] }
    }
}

/// One experiment: task, method, seed, budgets, and solver knobs. Optional
/// fields fall back to documented defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Built-in task name, or use `task_file` to load a full task spec.
    pub task: String,
    /// Optional path to a JSON task definition overriding the named task.
    #[serde(default)]
    pub task_file: Option<String>,
    pub method: Method,
    pub seed: u64,
    pub iterations: usize,
    #[serde(default = "default_conditions")]
    pub conditions: usize,
    #[serde(default = "default_samples")]
    pub samples_per_condition: usize,
    /// KL step size for the constrained trajectory update.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Multiplier step size.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_nu_init")]
    pub nu_init: f64,
    #[serde(default)]
    pub policy: PolicySpecConfig,
    pub output_dir: String,

    // Solver knobs with library defaults.
    #[serde(default = "default_inner_passes")]
    pub inner_passes: usize,
    #[serde(default = "default_policy_steps")]
    pub policy_steps: usize,
    #[serde(default = "default_policy_lr")]
    pub policy_learning_rate: f64,
    #[serde(default = "default_replay_window")]
    pub replay_window: usize,
    #[serde(default)]
    pub trajectory_only: bool,
    #[serde(default)]
    pub pretrain_iterations: usize,
    #[serde(default)]
    pub shared_dynamics: bool,
    /// Floor added to controller covariances after each update (keeps
    /// exploration from collapsing).
    #[serde(default)]
    pub min_exploration_variance: f64,
    /// Upper clamp for the per-step penalty weights.
    #[serde(default = "default_nu_max")]
    pub nu_max: f64,
    /// Baseline-only: rollouts per iteration (per condition).
    #[serde(default = "default_baseline_samples")]
    pub baseline_samples_per_iteration: usize,
    /// Baseline-only: elite fraction for the refit.
    #[serde(default = "default_elite_fraction")]
    pub elite_fraction: f64,
    /// Baseline-only: exploration variance over flattened parameters.
    #[serde(default = "default_exploration_variance")]
    pub exploration_variance: f64,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_conditions() -> usize {
    4
}
fn default_samples() -> usize {
    5
}
fn default_epsilon() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.1
}
fn default_nu_init() -> f64 {
    0.01
}
fn default_inner_passes() -> usize {
    2
}
fn default_policy_steps() -> usize {
    50
}
fn default_policy_lr() -> f64 {
    1e-3
}
fn default_replay_window() -> usize {
    3
}
fn default_nu_max() -> f64 {
    1e4
}
fn default_baseline_samples() -> usize {
    20
}
fn default_elite_fraction() -> f64 {
    0.2
}
fn default_exploration_variance() -> f64 {
    0.01
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        Ok(config)
    }

    /// Validate every field, collecting all failures.
    pub fn validate(&self) -> Result<TaskSpec, Vec<String>> {
        let mut errors = Vec::new();
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            errors.push(format!(
                "schema_version {} unsupported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let task = if let Some(path) = &self.task_file {
            match std::fs::read_to_string(path) {
                Ok(text) => match serde_json::from_str::<TaskSpec>(&text) {
                    Ok(spec) => match spec.validate() {
                        Ok(()) => Some(spec),
                        Err(e) => {
                            errors.push(format!("task_file {path}: {e}"));
                            None
                        }
                    },
                    Err(e) => {
                        errors.push(format!("task_file {path}: malformed task spec: {e}"));
                        None
                    }
                },
                Err(e) => {
                    errors.push(format!("task_file {path}: {e}"));
                    None
                }
            }
        } else {
            match TaskSpec::by_name(&self.task) {
                Some(spec) => Some(spec),
                None => {
                    errors.push(format!(
                        "unknown task '{}' (expected one of double_integrator, \
                         pointmass_peg, arm_peg, pointmass_peg_vision)",
                        self.task
                    ));
                    None
                }
            }
        };
        if self.iterations == 0 || self.iterations > 10_000 {
            errors.push("iterations must be in 1..=10000".into());
        }
        if self.conditions == 0 || self.conditions > 64 {
            errors.push("conditions must be in 1..=64".into());
        }
        if self.samples_per_condition == 0 || self.samples_per_condition > 1000 {
            errors.push("samples_per_condition must be in 1..=1000".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            errors.push("epsilon must be positive and finite".into());
        }
        if !(0.0..=10.0).contains(&self.alpha) {
            errors.push("alpha must be in [0, 10]".into());
        }
        if !(self.nu_init > 0.0 && self.nu_init <= 1e4) {
            errors.push("nu_init must be in (0, 1e4]".into());
        }
        if !(self.nu_max > 0.0 && self.nu_max <= 1e4) {
            errors.push("nu_max must be in (0, 1e4]".into());
        }
        if !(0.0..=10.0).contains(&self.min_exploration_variance) {
            errors.push("min_exploration_variance must be in [0, 10]".into());
        }
        if self.policy.hidden.iter().any(|&h| h == 0 || h > 4096) {
            errors.push("policy hidden sizes must be in 1..=4096".into());
        }
        if !(0.0 < self.elite_fraction && self.elite_fraction <= 1.0) {
            errors.push("elite_fraction must be in (0, 1]".into());
        }
        if self.method != Method::Gps && self.baseline_samples_per_iteration < 2 {
            errors.push("baseline_samples_per_iteration must be at least 2".into());
        }
        if self.output_dir.is_empty() {
            errors.push("output_dir must not be empty".into());
        }
        match (errors.is_empty(), task) {
            (true, Some(task)) => Ok(task),
            _ => Err(errors),
        }
    }

    pub fn gps_config(&self) -> GpsConfig {
        GpsConfig {
            conditions: self.conditions,
            samples_per_condition: self.samples_per_condition,
            iterations: self.iterations,
            pretrain_iterations: self.pretrain_iterations,
            inner_passes: self.inner_passes,
            policy_steps: self.policy_steps,
            policy_learning_rate: self.policy_learning_rate,
            epsilon: self.epsilon,
            alpha: self.alpha,
            nu_init: self.nu_init,
            replay_window: self.replay_window,
            shared_dynamics: self.shared_dynamics,
            policy_hidden: self.policy.hidden.clone(),
            seed: self.seed,
            trajectory_only: self.trajectory_only,
            min_exploration_variance: self.min_exploration_variance,
            nu_max: self.nu_max,
            ..GpsConfig::default()
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            method: match self.method {
                Method::Cem => BaselineMethod::Cem,
                Method::Rwr => BaselineMethod::Rwr,
                Method::Gps => unreachable!("baseline config requested for gps"),
            },
            samples_per_iteration: self.baseline_samples_per_iteration,
            iterations: self.iterations,
            elite_fraction: self.elite_fraction,
            exploration_variance: self.exploration_variance,
            seed: self.seed,
        }
    }

    pub fn method_name(&self) -> &'static str {
        match self.method {
            Method::Gps => "gps",
            Method::Cem => "cem",
            Method::Rwr => "rwr",
        }
    }
}
