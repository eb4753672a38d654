//! Quadratic cost expansion, the LQR backward recurrence with a
//! maximum-entropy linear-Gaussian controller, and exact forward propagation
//! of Gaussian state-action marginals.
//!
//! Conventions: the controller is defined for `t = 0..T`, the dynamics for
//! `t = 0..T-1`; the final step has no dynamics carry-over. Expansions are
//! recentered around zero, so the stored gradient is the gradient of the
//! quadratic at the origin, not at the nominal point.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynfit::LinearGaussianDynamics;
use crate::error::GpsError;
use crate::gauss::{regularize_spd, symmetrized, Gaussian};
use crate::Result;

/// Value, gradient, and Hessian of a cost at one `(x, u)` point. Gradient
/// and Hessian are over the stacked vector `[x; u]`.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// A twice-differentiable per-step cost.
pub trait CostFunction {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval;
}

/// Per-timestep quadratic model `0.5 z^T H z + z^T g + c` over `z = [x; u]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticCostExpansion {
    pub hessians: Vec<DMatrix<f64>>,
    pub gradients: Vec<DVector<f64>>,
    pub constants: Vec<f64>,
    pub dx: usize,
    pub du: usize,
}

impl QuadraticCostExpansion {
    pub fn horizon(&self) -> usize {
        self.hessians.len()
    }

    /// Cost of the quadratic model at a point.
    pub fn value_at(&self, t: usize, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessians[t] * z)) + z.dot(&self.gradients[t]) + self.constants[t]
    }

    /// Expected cost under a Gaussian over `[x; u]` at step `t`.
    pub fn expected_value(&self, t: usize, marginal: &Gaussian) -> f64 {
        let h = &self.hessians[t];
        let mu = &marginal.mean;
        0.5 * ((h * &marginal.cov).trace() + mu.dot(&(h * mu)))
            + mu.dot(&self.gradients[t])
            + self.constants[t]
    }
}

/// Time-varying linear-Gaussian feedback law `u_t ~ N(K_t x_t + k_t, C_t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearGaussianController {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl LinearGaussianController {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn dx(&self) -> usize {
        self.gains[0].ncols()
    }

    pub fn du(&self) -> usize {
        self.gains[0].nrows()
    }

    pub fn mean_action(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.gains[t] * x + &self.offsets[t]
    }

    /// Sum over steps of the conditional entropy `0.5 ln det(2 pi e C_t)`.
    pub fn entropy(&self) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.covs {
            let chol = crate::gauss::spd_cholesky(c)?;
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let d = c.nrows() as f64;
            total += 0.5 * (d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + log_det);
        }
        Ok(total)
    }
}

/// Value and Q quantities exposed for diagnostics.
#[derive(Debug, Clone)]
pub struct ValueRecursion {
    pub v_xx: Vec<DMatrix<f64>>,
    pub v_x: Vec<DVector<f64>>,
    pub q_zz: Vec<DMatrix<f64>>,
    pub q_z: Vec<DVector<f64>>,
    /// Identity shift applied to make the action block positive definite
    /// (zero when none was needed).
    pub pd_shifts: Vec<f64>,
}

/// Expand a cost to a per-step quadratic around a nominal trajectory,
/// recentered so the model is a polynomial in `[x; u]` itself.
pub fn quadratize(
    cost: &dyn CostFunction,
    states: &[DVector<f64>],
    actions: &[DVector<f64>],
) -> Result<QuadraticCostExpansion> {
    assert_eq!(states.len(), actions.len(), "nominal trajectory length mismatch");
    let horizon = states.len();
    let dx = states[0].len();
    let du = actions[0].len();
    let mut out = QuadraticCostExpansion {
        hessians: Vec::with_capacity(horizon),
        gradients: Vec::with_capacity(horizon),
        constants: Vec::with_capacity(horizon),
        dx,
        du,
    };
    for t in 0..horizon {
        let eval = cost.eval(&states[t], &actions[t]);
        if !eval.value.is_finite()
            || !eval.grad.iter().all(|v| v.is_finite())
            || !eval.hess.iter().all(|v| v.is_finite())
        {
            return Err(GpsError::ExpansionFailure { t });
        }
        let mut z = DVector::zeros(dx + du);
        z.rows_mut(0, dx).copy_from(&states[t]);
        z.rows_mut(dx, du).copy_from(&actions[t]);
        let mut hess = symmetrized(&eval.hess);
        // Keep the action block positive definite; the state block may stay
        // indefinite (soft costs curve away from walls).
        let uu = hess.view((dx, dx), (du, du)).into_owned();
        let uu_fixed = regularize_spd(&uu)?;
        hess.view_mut((dx, dx), (du, du)).copy_from(&uu_fixed);
        let grad = &eval.grad - &hess * &z;
        let constant = eval.value - eval.grad.dot(&z) + 0.5 * z.dot(&(&hess * &z));
        out.hessians.push(hess);
        out.gradients.push(grad);
        out.constants.push(constant);
    }
    Ok(out)
}

/// LQR backward pass on a quadratic cost model and linear-Gaussian dynamics.
///
/// Returns the maximum-entropy optimal controller (covariance `Q_uu^{-1}`)
/// together with the value recursion. Indefinite action blocks are shifted
/// by a doubling identity term starting at 1e-6.
pub fn backward_pass(
    expansion: &QuadraticCostExpansion,
    dynamics: &LinearGaussianDynamics,
) -> Result<(LinearGaussianController, ValueRecursion)> {
    let horizon = expansion.horizon();
    if dynamics.steps() + 1 != horizon {
        return Err(GpsError::InvalidConfig(format!(
            "dynamics cover {} transitions but the cost spans {} steps",
            dynamics.steps(),
            horizon
        )));
    }
    let dx = expansion.dx;
    let du = expansion.du;
    let mut controller = LinearGaussianController {
        gains: vec![DMatrix::zeros(du, dx); horizon],
        offsets: vec![DVector::zeros(du); horizon],
        covs: vec![DMatrix::zeros(du, du); horizon],
    };
    let mut rec = ValueRecursion {
        v_xx: vec![DMatrix::zeros(dx, dx); horizon],
        v_x: vec![DVector::zeros(dx); horizon],
        q_zz: vec![DMatrix::zeros(dx + du, dx + du); horizon],
        q_z: vec![DVector::zeros(dx + du); horizon],
        pd_shifts: vec![0.0; horizon],
    };

    let mut v_xx = DMatrix::zeros(dx, dx);
    let mut v_x = DVector::zeros(dx);
    for t in (0..horizon).rev() {
        let mut q_zz = expansion.hessians[t].clone();
        let mut q_z = expansion.gradients[t].clone();
        if t + 1 < horizon {
            let mut f_z = DMatrix::zeros(dx, dx + du);
            f_z.view_mut((0, 0), (dx, dx)).copy_from(&dynamics.fx[t]);
            f_z.view_mut((0, dx), (dx, du)).copy_from(&dynamics.fu[t]);
            q_zz += f_z.transpose() * &v_xx * &f_z;
            q_z += f_z.transpose() * (&v_x + &v_xx * &dynamics.fc[t]);
        }
        let q_zz = symmetrized(&q_zz);

        let q_xx = q_zz.view((0, 0), (dx, dx)).into_owned();
        let q_ux = q_zz.view((dx, 0), (du, dx)).into_owned();
        let q_uu = q_zz.view((dx, dx), (du, du)).into_owned();
        let q_x = q_z.rows(0, dx).into_owned();
        let q_u = q_z.rows(dx, du).into_owned();

        let (chol, shift) = shifted_cholesky(&q_uu)
            .ok_or(GpsError::BackwardPassFailure { t })?;
        let gain = -chol.solve(&q_ux);
        let offset = -chol.solve(&q_u);
        let cov = symmetrized(&chol.inverse());

        v_xx = symmetrized(&(&q_xx + q_ux.transpose() * &gain));
        v_x = &q_x + q_ux.transpose() * &offset;

        controller.gains[t] = gain;
        controller.offsets[t] = offset;
        controller.covs[t] = cov;
        rec.v_xx[t] = v_xx.clone();
        rec.v_x[t] = v_x.clone();
        rec.q_zz[t] = q_zz;
        rec.q_z[t] = q_z;
        rec.pd_shifts[t] = shift;
    }
    Ok((controller, rec))
}

/// Cholesky of a symmetric matrix, adding a doubling identity shift starting
/// at 1e-6 when needed. Returns the factorization and the shift applied.
fn shifted_cholesky(m: &DMatrix<f64>) -> Option<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Some((chol, 0.0));
    }
    let mut shift = 1e-6;
    for _ in 0..64 {
        let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * shift;
        if let Some(chol) = Cholesky::new(shifted) {
            return Some((chol, shift));
        }
        shift *= 2.0;
    }
    None
}

/// Exact Gaussian marginals over `[x_t; u_t]` induced by a linear-Gaussian
/// controller on linear-Gaussian dynamics from a Gaussian initial state.
pub fn forward_pass(
    controller: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    initial: &Gaussian,
) -> Result<Vec<Gaussian>> {
    let horizon = controller.horizon();
    if dynamics.steps() + 1 != horizon {
        return Err(GpsError::InvalidConfig(format!(
            "dynamics cover {} transitions but the controller spans {} steps",
            dynamics.steps(),
            horizon
        )));
    }
    let dx = controller.dx();
    let du = controller.du();
    let mut mu_x = initial.mean.clone();
    let mut sig_x = symmetrized(&initial.cov);
    let mut marginals = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let gain = &controller.gains[t];
        let mu_u = gain * &mu_x + &controller.offsets[t];
        let cross = &sig_x * gain.transpose();
        let sig_u = gain * &cross + &controller.covs[t];

        let mut mean = DVector::zeros(dx + du);
        mean.rows_mut(0, dx).copy_from(&mu_x);
        mean.rows_mut(dx, du).copy_from(&mu_u);
        let mut cov = DMatrix::zeros(dx + du, dx + du);
        cov.view_mut((0, 0), (dx, dx)).copy_from(&sig_x);
        cov.view_mut((0, dx), (dx, du)).copy_from(&cross);
        cov.view_mut((dx, 0), (du, dx)).copy_from(&cross.transpose());
        cov.view_mut((dx, dx), (du, du)).copy_from(&symmetrized(&sig_u));
        let joint = Gaussian::new(mean, symmetrized(&cov));

        if t + 1 < horizon {
            let mut f_z = DMatrix::zeros(dx, dx + du);
            f_z.view_mut((0, 0), (dx, dx)).copy_from(&dynamics.fx[t]);
            f_z.view_mut((0, dx), (dx, du)).copy_from(&dynamics.fu[t]);
            mu_x = &f_z * &joint.mean + &dynamics.fc[t];
            sig_x = symmetrized(&(&f_z * &joint.cov * f_z.transpose() + &dynamics.cov[t]));
        }
        marginals.push(joint);
    }
    Ok(marginals)
}

/// Total expected cost of a controller under a quadratic cost model,
/// evaluated in closed form through the forward marginals.
pub fn expected_cost(
    expansion: &QuadraticCostExpansion,
    controller: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    initial: &Gaussian,
) -> Result<f64> {
    let marginals = forward_pass(controller, dynamics, initial)?;
    Ok((0..expansion.horizon())
        .map(|t| expansion.expected_value(t, &marginals[t]))
        .sum())
}

/// A generic quadratic cost `0.5 (x - x*)^T Q (x - x*) + 0.5 u^T R u`,
/// usable directly as a [`CostFunction`].
#[derive(Debug, Clone)]
pub struct QuadraticCost {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl CostFunction for QuadraticCost {
    fn eval(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostEval {
        let dx = x.len();
        let du = u.len();
        let diff = x - &self.target;
        let value = 0.5 * diff.dot(&(&self.q * &diff)) + 0.5 * u.dot(&(&self.r * u));
        let mut grad = DVector::zeros(dx + du);
        grad.rows_mut(0, dx).copy_from(&(&self.q * &diff));
        grad.rows_mut(dx, du).copy_from(&(&self.r * u));
        let mut hess = DMatrix::zeros(dx + du, dx + du);
        hess.view_mut((0, 0), (dx, dx)).copy_from(&self.q);
        hess.view_mut((dx, dx), (du, du)).copy_from(&self.r);
        CostEval { value, grad, hess }
    }
}
