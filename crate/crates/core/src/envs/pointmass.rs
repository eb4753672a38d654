//! Point-mass environments: the linear double integrator and the 2D slot
//! insertion task, plus the image-observed variant.

use nalgebra::{DMatrix, DVector, Vector2};

use super::contact::SlotGeometry;
use super::costs::PegCost;
use super::render::{render_scene, IMG_PIXELS};
use super::{Environment, TaskSpec};
use crate::lqr::{CostEval, CostFunction, QuadraticCost};

/// 1D double integrator with exact zero-order-hold discretization:
/// `p' = p + dt v + dt^2/2 u`, `v' = v + dt u`. Quadratic cost toward a
/// target position at rest.
pub struct DoubleIntegratorEnv {
    spec: TaskSpec,
    target_pos: f64,
    start: DVector<f64>,
    cost: QuadraticCost,
}

impl DoubleIntegratorEnv {
    pub fn new(spec: TaskSpec, target_pos: f64, start: DVector<f64>) -> Self {
        let cost = QuadraticCost {
            q: DMatrix::from_row_slice(
                2,
                2,
                &[spec.position_weight, 0.0, 0.0, 0.1 * spec.position_weight],
            ),
            r: DMatrix::identity(1, 1) * spec.action_weight,
            target: DVector::from_row_slice(&[target_pos, 0.0]),
        };
        Self { spec, target_pos, start, cost }
    }

    /// The exact transition matrices, for oracle comparisons.
    pub fn system_matrices(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.spec.dt;
        (
            DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5 * dt * dt, dt]),
        )
    }
}

impl Environment for DoubleIntegratorEnv {
    fn state_dim(&self) -> usize {
        2
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        2
    }
    fn horizon(&self) -> usize {
        self.spec.horizon
    }
    fn dt(&self) -> f64 {
        self.spec.dt
    }
    fn position_dims(&self) -> usize {
        1
    }
    fn initial_state(&self) -> DVector<f64> {
        self.start.clone()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (a, b) = self.system_matrices();
        a * x + b * u
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }

    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        self.cost.eval(x, u)
    }

    fn target_distance(&self, x: &DVector<f64>) -> f64 {
        (x[0] - self.target_pos).abs()
    }

    fn target(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.target_pos, 0.0])
    }
}

/// A unit point mass pushed by planar forces around a slotted table. State
/// is `(px, py, vx, vy)`; the observation withholds the target and slot
/// position.
pub struct PointMassPegEnv {
    spec: TaskSpec,
    slot: SlotGeometry,
    cost: PegCost,
    target: Vector2<f64>,
    start: DVector<f64>,
}

impl PointMassPegEnv {
    pub fn new(spec: TaskSpec, target: DVector<f64>, start: DVector<f64>) -> Self {
        let target = Vector2::new(target[0], target[1]);
        // The slot is cut into a table whose surface sits at y = 0; the
        // target is at the slot bottom.
        let slot = spec.slot(target.x, 0.0);
        let cost = PegCost {
            action_weight: spec.action_weight,
            position_weight: spec.position_weight,
            alpha: spec.soft_alpha,
            target,
        };
        Self { spec, slot, cost, target, start }
    }

    pub fn slot_geometry(&self) -> &SlotGeometry {
        &self.slot
    }

    fn split(x: &DVector<f64>) -> (Vector2<f64>, Vector2<f64>) {
        (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]))
    }
}

impl Environment for PointMassPegEnv {
    fn state_dim(&self) -> usize {
        4
    }
    fn action_dim(&self) -> usize {
        2
    }
    fn obs_dim(&self) -> usize {
        4
    }
    fn horizon(&self) -> usize {
        self.spec.horizon
    }
    fn dt(&self) -> f64 {
        self.spec.dt
    }
    fn position_dims(&self) -> usize {
        2
    }
    fn initial_state(&self) -> DVector<f64> {
        self.start.clone()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        // Semi-implicit Euler with substeps: the stiff contact spring needs
        // a finer integration step than the control period.
        const SUBSTEPS: usize = 5;
        let h = self.spec.dt / SUBSTEPS as f64;
        let (mut pos, mut vel) = Self::split(x);
        let push = Vector2::new(u[0], u[1]);
        for _ in 0..SUBSTEPS {
            let force = push + self.slot.contact_force(&pos, &vel);
            vel += force * h;
            pos += vel * h;
        }
        DVector::from_row_slice(&[pos.x, pos.y, vel.x, vel.y])
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        // Position and velocity of the mass only; nothing reveals the slot.
        x.clone()
    }

    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        let mut jac = DMatrix::zeros(2, 4);
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let (pos, _) = Self::split(x);
        self.cost.eval_through_point(&pos, &jac, None, 4, u)
    }

    fn target_distance(&self, x: &DVector<f64>) -> f64 {
        let (pos, _) = Self::split(x);
        (pos - self.target).norm()
    }

    fn target(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.target.x, self.target.y])
    }
}

/// The point-mass task observed through a rendered 32x32 grayscale image of
/// the mass and the slot mouth, concatenated with the mass velocity. The
/// image is what reveals the target to the policy.
pub struct VisionPointMassEnv {
    inner: PointMassPegEnv,
}

impl VisionPointMassEnv {
    pub fn new(inner: PointMassPegEnv) -> Self {
        Self { inner }
    }
}

impl Environment for VisionPointMassEnv {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }
    fn obs_dim(&self) -> usize {
        IMG_PIXELS + 2
    }
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn position_dims(&self) -> usize {
        self.inner.position_dims()
    }
    fn initial_state(&self) -> DVector<f64> {
        self.inner.initial_state()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.inner.step(x, u)
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        let image = render_scene(
            &Vector2::new(x[0], x[1]),
            Some(&Vector2::new(self.inner.target.x, 0.0)),
        );
        let mut obs = DVector::zeros(IMG_PIXELS + 2);
        obs.rows_mut(0, IMG_PIXELS).copy_from(&image);
        obs[IMG_PIXELS] = x[2];
        obs[IMG_PIXELS + 1] = x[3];
        obs
    }

    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        self.inner.cost(x, u)
    }
    fn target_distance(&self, x: &DVector<f64>) -> f64 {
        self.inner.target_distance(x)
    }
    fn target(&self) -> DVector<f64> {
        self.inner.target()
    }
}
