//! Planar two-link arm with analytic dynamics, inserting its tip into the
//! slot. State is `(q1, q2, w1, w2)`, actions are joint torques.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::contact::SlotGeometry;
use super::costs::PegCost;
use super::{Environment, TaskSpec};
use crate::lqr::CostEval;

const L1: f64 = 0.5;
const L2: f64 = 0.5;
const M1: f64 = 1.0;
const M2: f64 = 1.0;
/// Table surface height in the arm workspace; the base sits above the table
/// so the tip can reach the slot from above.
pub const SLOT_SURFACE_Y: f64 = -0.4;

pub struct TwoLinkArmEnv {
    spec: TaskSpec,
    slot: SlotGeometry,
    cost: PegCost,
    target: Vector2<f64>,
    start: DVector<f64>,
}

impl TwoLinkArmEnv {
    pub fn new(spec: TaskSpec, target: DVector<f64>, start: DVector<f64>) -> Self {
        let target = Vector2::new(target[0], target[1]);
        let slot = spec.slot(target.x, SLOT_SURFACE_Y);
        let cost = PegCost {
            action_weight: spec.action_weight,
            position_weight: spec.position_weight,
            alpha: spec.soft_alpha,
            target,
        };
        Self { spec, slot, cost, target, start }
    }

    /// Tip position for joint angles `q` (base at the origin).
    pub fn forward_kinematics(q1: f64, q2: f64) -> Vector2<f64> {
        Vector2::new(
            L1 * q1.cos() + L2 * (q1 + q2).cos(),
            L1 * q1.sin() + L2 * (q1 + q2).sin(),
        )
    }

    /// Tip Jacobian with respect to the joint angles.
    pub fn tip_jacobian(q1: f64, q2: f64) -> Matrix2<f64> {
        let s1 = q1.sin();
        let c1 = q1.cos();
        let s12 = (q1 + q2).sin();
        let c12 = (q1 + q2).cos();
        Matrix2::new(-L1 * s1 - L2 * s12, -L2 * s12, L1 * c1 + L2 * c12, L2 * c12)
    }

    /// Second derivatives of each tip coordinate with respect to `(q1, q2)`.
    fn tip_curvature(q1: f64, q2: f64) -> (Matrix2<f64>, Matrix2<f64>) {
        let c1 = q1.cos();
        let s1 = q1.sin();
        let c12 = (q1 + q2).cos();
        let s12 = (q1 + q2).sin();
        let tx = Matrix2::new(
            -L1 * c1 - L2 * c12,
            -L2 * c12,
            -L2 * c12,
            -L2 * c12,
        );
        let ty = Matrix2::new(
            -L1 * s1 - L2 * s12,
            -L2 * s12,
            -L2 * s12,
            -L2 * s12,
        );
        (tx, ty)
    }

    /// Mass matrix of the two-link chain (point masses at the link tips).
    fn mass_matrix(q2: f64) -> Matrix2<f64> {
        let c2 = q2.cos();
        let a11 = (M1 + M2) * L1 * L1 + M2 * L2 * L2 + 2.0 * M2 * L1 * L2 * c2;
        let a12 = M2 * L2 * L2 + M2 * L1 * L2 * c2;
        let a22 = M2 * L2 * L2;
        Matrix2::new(a11, a12, a12, a22)
    }

    /// Coriolis / centrifugal torques.
    fn coriolis(q2: f64, w1: f64, w2: f64) -> Vector2<f64> {
        let s2 = q2.sin();
        let h = M2 * L1 * L2 * s2;
        Vector2::new(-h * (2.0 * w1 * w2 + w2 * w2), h * w1 * w1)
    }

    /// Kinetic energy, used by the integrator audit.
    pub fn kinetic_energy(x: &DVector<f64>) -> f64 {
        let m = Self::mass_matrix(x[1]);
        let w = Vector2::new(x[2], x[3]);
        0.5 * w.dot(&(m * w))
    }
}

impl Environment for TwoLinkArmEnv {
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
        // Semi-implicit Euler with substeps for the stiff contact forces;
        // torque is held constant over the control period.
        const SUBSTEPS: usize = 5;
        let h = self.spec.dt / SUBSTEPS as f64;
        let (mut q1, mut q2, mut w1, mut w2) = (x[0], x[1], x[2], x[3]);
        for _ in 0..SUBSTEPS {
            let tip = Self::forward_kinematics(q1, q2);
            let jac = Self::tip_jacobian(q1, q2);
            let tip_vel = jac * Vector2::new(w1, w2);
            let contact = self.slot.contact_force(&tip, &tip_vel);
            let torque = Vector2::new(u[0], u[1]) + jac.transpose() * contact;
            let m = Self::mass_matrix(q2);
            let cor = Self::coriolis(q2, w1, w2);
            let accel = m.lu().solve(&(torque - cor)).unwrap_or_else(Vector2::zeros);
            w1 += h * accel.x;
            w2 += h * accel.y;
            q1 += h * w1;
            q2 += h * w2;
        }
        DVector::from_row_slice(&[q1, q2, w1, w2])
    }

    fn observe(&self, x: &DVector<f64>) -> DVector<f64> {
        // Joint angles and velocities only; the slot position is withheld.
        x.clone()
    }

    fn cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        let tip = Self::forward_kinematics(x[0], x[1]);
        let jac2 = Self::tip_jacobian(x[0], x[1]);
        let mut jac = DMatrix::zeros(2, 4);
        for i in 0..2 {
            for j in 0..2 {
                jac[(i, j)] = jac2[(i, j)];
            }
        }
        let (tx, ty) = Self::tip_curvature(x[0], x[1]);
        let mut t0 = DMatrix::zeros(4, 4);
        let mut t1 = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                t0[(i, j)] = tx[(i, j)];
                t1[(i, j)] = ty[(i, j)];
            }
        }
        self.cost.eval_through_point(&tip, &jac, Some([&t0, &t1]), 4, u)
    }

    fn target_distance(&self, x: &DVector<f64>) -> f64 {
        (Self::forward_kinematics(x[0], x[1]) - self.target).norm()
    }

    fn target(&self) -> DVector<f64> {
        DVector::from_row_slice(&[self.target.x, self.target.y])
    }
}
