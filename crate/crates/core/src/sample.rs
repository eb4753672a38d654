//! Rollout records shared by the fitting, policy-training, and metrics code.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// One rollout: per-step states, actions, observations, and costs over a
/// horizon of `T` steps. States and actions both have length `T`; the
/// transition at step `t` pairs `(states[t], actions[t])` with `states[t+1]`,
/// so `T - 1` transitions are available.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub condition: usize,
    pub iteration: usize,
    pub states: Vec<DVector<f64>>,
    pub actions: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
    pub costs: Vec<f64>,
}

impl TrajectorySample {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Stacked transition tuple `[x_t; u_t; x_{t+1}]`.
    pub fn transition_tuple(&self, t: usize) -> DVector<f64> {
        let x = &self.states[t];
        let u = &self.actions[t];
        let xn = &self.states[t + 1];
        let mut v = DVector::zeros(x.len() + u.len() + xn.len());
        v.rows_mut(0, x.len()).copy_from(x);
        v.rows_mut(x.len(), u.len()).copy_from(u);
        v.rows_mut(x.len() + u.len(), xn.len()).copy_from(xn);
        v
    }

    /// All transition tuples of this rollout.
    pub fn transition_tuples(&self) -> Vec<DVector<f64>> {
        (0..self.horizon() - 1).map(|t| self.transition_tuple(t)).collect()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }
}
