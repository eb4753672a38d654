//! Task costs with analytic value, gradient, and Hessian.
//!
//! The insertion cost is an action penalty plus a combined l2 / soft-l1
//! distance `d(z) = 0.5 ||z||^2 + sqrt(alpha + ||z||^2)` between a
//! state-dependent point and the target. The square-root term is read as a
//! function of the squared norm, so it stays smooth for vector arguments.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::lqr::CostEval;

/// Value, gradient, and Hessian of `d(z) = 0.5 ||z||^2 + sqrt(alpha + ||z||^2)`.
pub fn soft_norm(z: &Vector2<f64>, alpha: f64) -> (f64, Vector2<f64>, Matrix2<f64>) {
    let sq = z.norm_squared();
    let s = (alpha + sq).sqrt();
    let value = 0.5 * sq + s;
    let grad = z + z / s;
    let hess = Matrix2::identity() * (1.0 + 1.0 / s) - (z * z.transpose()) / (s * s * s);
    (value, grad, hess)
}

/// Insertion cost `0.5 w_u ||u||^2 + w_p d(p(x) - target)` where `p(x)` is a
/// task-specific point (the mass position or the arm end effector).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PegCost {
    pub action_weight: f64,
    pub position_weight: f64,
    pub alpha: f64,
    pub target: Vector2<f64>,
}

impl PegCost {
    /// Assemble the full cost given the point, its Jacobian with respect to
    /// the state, and (optionally) the per-coordinate second-derivative
    /// matrices of the point map.
    pub fn eval_through_point(
        &self,
        point: &Vector2<f64>,
        jacobian: &DMatrix<f64>,
        curvature: Option<[&DMatrix<f64>; 2]>,
        state_dim: usize,
        u: &DVector<f64>,
    ) -> CostEval {
        let du = u.len();
        let z = point - self.target;
        let (dval, dgrad, dhess) = soft_norm(&z, self.alpha);

        let value =
            0.5 * self.action_weight * u.norm_squared() + self.position_weight * dval;

        let mut grad = DVector::zeros(state_dim + du);
        let gx = jacobian.transpose() * DVector::from_row_slice(&[dgrad.x, dgrad.y])
            * self.position_weight;
        grad.rows_mut(0, state_dim).copy_from(&gx);
        grad.rows_mut(state_dim, du).copy_from(&(u * self.action_weight));

        let mut hess = DMatrix::zeros(state_dim + du, state_dim + du);
        let dhess_dyn = DMatrix::from_row_slice(
            2,
            2,
            &[dhess[(0, 0)], dhess[(0, 1)], dhess[(1, 0)], dhess[(1, 1)]],
        );
        let mut hxx = jacobian.transpose() * dhess_dyn * jacobian;
        if let Some([t0, t1]) = curvature {
            hxx += t0 * dgrad.x + t1 * dgrad.y;
        }
        hess.view_mut((0, 0), (state_dim, state_dim))
            .copy_from(&(hxx * self.position_weight));
        for i in 0..du {
            hess[(state_dim + i, state_dim + i)] = self.action_weight;
        }
        CostEval { value, grad, hess }
    }
}
