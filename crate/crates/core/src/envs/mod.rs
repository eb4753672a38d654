//! Simulated environments with analytic cost derivatives.
//!
//! Four built-in task families:
//! - a linear double integrator (oracle-checkable against exact LQR),
//! - 2D point-mass slot insertion with soft contact,
//! - a two-link planar arm inserting into the same slot geometry,
//! - a visuomotor variant of the point-mass task observed through a
//!   rendered 32x32 image.
//!
//! Environments are immutable condition instances: `step`, `cost`, and
//! `observe` are pure and safe to call concurrently.

mod arm;
mod contact;
mod costs;
mod pointmass;
pub mod render;

pub use arm::TwoLinkArmEnv;
pub use contact::SlotGeometry;
pub use costs::{soft_norm, PegCost};
pub use pointmass::{DoubleIntegratorEnv, PointMassPegEnv, VisionPointMassEnv};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::GpsError;
use crate::lqr::{CostEval, CostFunction};
use crate::Result;

/// One condition of a task: fixed geometry, target, and initial state.
pub trait Environment: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    fn dt(&self) -> f64;
    /// Number of leading state coordinates that are positions; the rest are
    /// their velocities.
    fn position_dims(&self) -> usize;
    fn initial_state(&self) -> DVector<f64>;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn observe(&self, x: &DVector<f64>) -> DVector<f64>;
    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval;
    /// Distance from the task-relevant point (end effector or mass) to the
    /// target point.
    fn target_distance(&self, x: &DVector<f64>) -> f64;
    fn target(&self) -> DVector<f64>;
}

/// Adapter exposing an environment's cost as a [`CostFunction`].
pub struct EnvCost<'a>(pub &'a dyn Environment);

impl CostFunction for EnvCost<'_> {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        self.0.cost(x, u)
    }
}

/// Task families built into the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    DoubleIntegrator,
    PointmassPeg,
    ArmPeg,
    PointmassPegVision,
}

impl TaskKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "double_integrator" => Some(Self::DoubleIntegrator),
            "pointmass_peg" => Some(Self::PointmassPeg),
            "arm_peg" => Some(Self::ArmPeg),
            "pointmass_peg_vision" => Some(Self::PointmassPegVision),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DoubleIntegrator => "double_integrator",
            Self::PointmassPeg => "pointmass_peg",
            Self::ArmPeg => "arm_peg",
            Self::PointmassPegVision => "pointmass_peg_vision",
        }
    }
}

/// Which condition set to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Full task description, loadable from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub horizon: usize,
    pub dt: f64,
    /// Action penalty weight (w_u).
    pub action_weight: f64,
    /// Position penalty weight (w_p).
    pub position_weight: f64,
    /// Soft-l1 constant (alpha).
    pub soft_alpha: f64,
    pub slot_width: f64,
    pub slot_depth: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    /// Width of the region the per-condition targets are drawn from.
    pub target_span: f64,
    /// Initial state (positions then velocities).
    pub start: Vec<f64>,
    /// Initial controller exploration noise (diagonal of C_t).
    pub init_action_noise: f64,
}

impl TaskSpec {
    /// Built-in defaults for each task family.
    pub fn builtin(kind: TaskKind) -> Self {
        match kind {
            TaskKind::DoubleIntegrator => Self {
                kind,
                horizon: 50,
                dt: 0.1,
                action_weight: 1e-3,
                position_weight: 1.0,
                soft_alpha: 1e-5,
                slot_width: 0.0,
                slot_depth: 0.0,
                contact_stiffness: 0.0,
                contact_damping: 0.0,
                target_span: 0.2,
                start: vec![1.0, 0.0],
                init_action_noise: 1.0,
            },
            TaskKind::PointmassPeg | TaskKind::PointmassPegVision => Self {
                kind,
                horizon: 100,
                dt: 0.05,
                action_weight: 1e-6,
                position_weight: 1.0,
                soft_alpha: 1e-5,
                slot_width: 0.12,
                slot_depth: 0.5,
                contact_stiffness: 1e3,
                contact_damping: 10.0,
                target_span: 0.2,
                start: vec![0.0, 0.25, 0.0, 0.0],
                init_action_noise: 1.0,
            },
            TaskKind::ArmPeg => Self {
                kind,
                horizon: 100,
                dt: 0.05,
                action_weight: 1e-6,
                position_weight: 1.0,
                soft_alpha: 1e-5,
                slot_width: 0.12,
                slot_depth: 0.5,
                contact_stiffness: 1e3,
                contact_damping: 10.0,
                target_span: 0.2,
                start: vec![0.6, 1.2, 0.0, 0.0],
                init_action_noise: 2.0,
            },
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        TaskKind::parse(name).map(Self::builtin)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(GpsError::InvalidConfig("horizon must be at least 2".into()));
        }
        if self.dt <= 0.0 {
            return Err(GpsError::InvalidConfig("dt must be positive".into()));
        }
        if self.action_weight < 0.0 || self.position_weight < 0.0 {
            return Err(GpsError::InvalidConfig("cost weights must be non-negative".into()));
        }
        if self.soft_alpha <= 0.0 {
            return Err(GpsError::InvalidConfig("soft_alpha must be positive".into()));
        }
        let expected_state = match self.kind {
            TaskKind::DoubleIntegrator => 2,
            _ => 4,
        };
        if self.start.len() != expected_state {
            return Err(GpsError::InvalidConfig(format!(
                "start state must have {expected_state} entries for task {}",
                self.kind.name()
            )));
        }
        Ok(())
    }

    /// Per-condition starting offsets for a split.
    ///
    /// A condition displaces the initial state relative to the fixed slot,
    /// which is the same thing as moving the slot relative to the start.
    /// Training offsets are equally spaced over the span; test offsets sit
    /// at seeded positions around the midpoints between training offsets,
    /// so the two sets are disjoint for every seed and cover the same
    /// region.
    pub fn condition_offsets(&self, split: Split, count: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let half = self.target_span / 2.0;
        match split {
            Split::Train => (0..count)
                .map(|i| {
                    let frac = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
                    -half + frac * self.target_span
                })
                .collect(),
            Split::Test => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x7e57);
                let spacing = if count <= 1 {
                    self.target_span
                } else {
                    self.target_span / (count - 1) as f64
                };
                (0..count)
                    .map(|i| {
                        let frac = if count == 1 {
                            0.5
                        } else {
                            (i as f64 + 0.5) / count as f64
                        };
                        let jitter = rng.gen_range(-0.2..0.2) * spacing;
                        (-half + frac * self.target_span + jitter).clamp(-half, half)
                    })
                    .collect()
            }
        }
    }

    /// Instantiate the environments for a split: one per condition.
    pub fn conditions(
        &self,
        split: Split,
        count: usize,
        seed: u64,
    ) -> Result<Vec<Box<dyn Environment>>> {
        self.validate()?;
        if count == 0 {
            return Err(GpsError::InvalidConfig("condition count must be positive".into()));
        }
        Ok(self
            .condition_offsets(split, count, seed)
            .into_iter()
            .map(|offset| self.instantiate(offset))
            .collect())
    }

    /// Build one condition: the base start displaced by `offset` along its
    /// first position coordinate, with the slot and target fixed at the
    /// origin of the task frame.
    pub fn instantiate(&self, offset: f64) -> Box<dyn Environment> {
        let mut start = DVector::from_row_slice(&self.start);
        start[0] += offset;
        match self.kind {
            TaskKind::DoubleIntegrator => {
                Box::new(DoubleIntegratorEnv::new(self.clone(), 0.0, start))
            }
            TaskKind::PointmassPeg => Box::new(PointMassPegEnv::new(
                self.clone(),
                DVector::from_row_slice(&[0.0, -self.slot_depth]),
                start,
            )),
            TaskKind::PointmassPegVision => Box::new(VisionPointMassEnv::new(
                PointMassPegEnv::new(
                    self.clone(),
                    DVector::from_row_slice(&[0.0, -self.slot_depth]),
                    start,
                ),
            )),
            TaskKind::ArmPeg => Box::new(TwoLinkArmEnv::new(
                self.clone(),
                DVector::from_row_slice(&[0.0, arm::SLOT_SURFACE_Y - self.slot_depth]),
                start,
            )),
        }
    }

    pub fn slot(&self, center_x: f64, surface_y: f64) -> SlotGeometry {
        SlotGeometry {
            center_x,
            surface_y,
            width: self.slot_width,
            depth: self.slot_depth,
            stiffness: self.contact_stiffness,
            damping: self.contact_damping,
        }
    }
}
