//! Per-iteration metrics shared by the trainer and the baselines, written
//! as JSON lines with an embedded schema version.

use serde::{Deserialize, Serialize};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub schema_version: u32,
    pub method: String,
    pub phase: String,
    pub iteration: usize,
    /// Cumulative rollout count, the sample-budget axis of learning curves.
    pub total_samples: usize,
    pub mean_cost: f64,
    pub mean_final_distance: f64,
    pub min_final_distance: f64,
    /// Final distance under the controllers' mean actions (no exploration
    /// noise), averaged over conditions.
    #[serde(default)]
    pub mean_final_distance_det: f64,
    /// Per-condition total KL between controller and policy trajectory laws.
    #[serde(default)]
    pub kl_policy_controller: Vec<f64>,
    #[serde(default)]
    pub lambda_norm: f64,
    #[serde(default)]
    pub nu_min: f64,
    #[serde(default)]
    pub nu_max: f64,
    /// Per-condition step multipliers from the constrained update.
    #[serde(default)]
    pub eta: Vec<f64>,
    /// Per-condition step outcome ("inactive", "constrained", "rejected").
    #[serde(default)]
    pub step_status: Vec<String>,
    #[serde(default)]
    pub stalled: bool,
    /// Final supervised loss of the last policy training pass.
    #[serde(default)]
    pub policy_loss: f64,
}

impl IterationMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}
