//! KL-step-constrained controller updates.
//!
//! The update minimizes a surrogate cost (task cost, action multiplier term,
//! and a policy-agreement log-density term) subject to a bound on the KL
//! divergence from the previous controller's trajectory distribution. The
//! bound is enforced by a geometric bisection on the step multiplier, with
//! the maximum-entropy LQR solving the primal problem at each multiplier.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynfit::{LinearGaussianDynamics, LinearizedPolicy};
use crate::error::GpsError;
use crate::gauss::{spd_cholesky, symmetrized, Gaussian};
use crate::lqr::{backward_pass, forward_pass, LinearGaussianController, QuadraticCostExpansion};
use crate::Result;

/// Surrogate quadratic cost with the multiplier values baked in.
#[derive(Debug, Clone)]
pub struct SurrogateCost {
    pub expansion: QuadraticCostExpansion,
    pub eta: f64,
    pub nu: Vec<f64>,
}

/// Outcome classification of one constrained update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepStatus {
    /// The unconstrained optimum already satisfies the bound.
    ConstraintInactive,
    /// The bisection landed on the constraint boundary.
    ConstrainedOptimum,
    /// No multiplier in range satisfied the bound; the previous controller
    /// is returned unchanged.
    StepRejected,
}

/// Result of [`kl_step`].
#[derive(Debug, Clone)]
pub struct StepResult {
    pub controller: LinearGaussianController,
    pub kl_per_step: Vec<f64>,
    pub kl_total: f64,
    pub eta: f64,
    pub iterations: usize,
    pub status: StepStatus,
}

/// Search parameters for the dual bisection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KlStepOptions {
    pub eta_min: f64,
    pub eta_max: f64,
    pub max_iterations: usize,
    /// Accept when |KL - epsilon| <= kl_tolerance * epsilon.
    pub kl_tolerance: f64,
}

impl Default for KlStepOptions {
    fn default() -> Self {
        Self { eta_min: 1e-8, eta_max: 1e8, max_iterations: 20, kl_tolerance: 0.1 }
    }
}

/// Quadratic model (Hessian, gradient, constant) of the negative log density
/// of a conditional Gaussian `N(gain x + offset, cov)` over `z = [x; u]`.
fn neg_log_density_quadratic(
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
    cov: &DMatrix<f64>,
    dx: usize,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let du = gain.nrows();
    let chol = spd_cholesky(cov)?;
    let precision = symmetrized(&chol.inverse());
    // m maps [x; u] to u - gain x.
    let mut m = DMatrix::zeros(du, dx + du);
    m.view_mut((0, 0), (du, dx)).copy_from(&(-gain));
    m.view_mut((0, dx), (du, du)).copy_from(&DMatrix::identity(du, du));
    let hess = m.transpose() * &precision * &m;
    let grad = -(m.transpose() * &precision * offset);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let constant = 0.5 * offset.dot(&(&precision * offset))
        + 0.5 * (du as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
    Ok((symmetrized(&hess), grad, constant))
}

/// Assemble the per-step surrogate quadratic
/// `(cost - u^T lambda_t - nu_t log pol(u|x) - eta log prev(u|x)) / (eta + nu_t)`.
pub fn build_surrogate(
    cost: &QuadraticCostExpansion,
    lambda: &[DVector<f64>],
    nu: &[f64],
    policy_lin: &LinearizedPolicy,
    prev: &LinearGaussianController,
    eta: f64,
) -> Result<SurrogateCost> {
    let horizon = cost.horizon();
    if lambda.len() != horizon
        || nu.len() != horizon
        || policy_lin.horizon() != horizon
        || prev.horizon() != horizon
    {
        return Err(GpsError::InvalidConfig(format!(
            "surrogate horizon mismatch: cost {}, lambda {}, nu {}, policy {}, prev {}",
            horizon,
            lambda.len(),
            nu.len(),
            policy_lin.horizon(),
            prev.horizon()
        )));
    }
    if eta < 0.0 {
        return Err(GpsError::InvalidConfig("eta must be non-negative".into()));
    }
    let dx = cost.dx;
    let du = cost.du;
    let mut expansion = QuadraticCostExpansion {
        hessians: Vec::with_capacity(horizon),
        gradients: Vec::with_capacity(horizon),
        constants: Vec::with_capacity(horizon),
        dx,
        du,
    };
    for t in 0..horizon {
        if nu[t] <= 0.0 {
            return Err(GpsError::InvalidConfig(format!("nu[{t}] must be positive")));
        }
        let scale = 1.0 / (eta + nu[t]);
        let (h_pol, g_pol, c_pol) = neg_log_density_quadratic(
            &policy_lin.gains[t],
            &policy_lin.offsets[t],
            &policy_lin.covs[t],
            dx,
        )?;
        let (h_prev, g_prev, c_prev) =
            neg_log_density_quadratic(&prev.gains[t], &prev.offsets[t], &prev.covs[t], dx)?;
        let mut grad = cost.gradients[t].clone();
        for i in 0..du {
            grad[dx + i] -= lambda[t][i];
        }
        expansion.hessians.push(
            (&cost.hessians[t] + &h_pol * nu[t] + &h_prev * eta) * scale,
        );
        expansion.gradients.push((grad + g_pol * nu[t] + g_prev * eta) * scale);
        expansion
            .constants
            .push((cost.constants[t] + c_pol * nu[t] + c_prev * eta) * scale);
    }
    Ok(SurrogateCost { expansion, eta, nu: nu.to_vec() })
}

/// Total and per-step KL divergence between the trajectory distributions of
/// two controllers under shared dynamics, computed in closed form.
///
/// The divergence decomposes as the state-expected conditional divergence at
/// each step; the shared dynamics terms cancel.
pub fn traj_kl(
    p: &LinearGaussianController,
    prev: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    initial: &Gaussian,
) -> Result<(Vec<f64>, f64)> {
    let horizon = p.horizon();
    if prev.horizon() != horizon {
        return Err(GpsError::InvalidConfig(format!(
            "controller horizons differ: {} vs {}",
            horizon,
            prev.horizon()
        )));
    }
    let marginals = forward_pass(p, dynamics, initial)?;
    let dx = p.dx();
    let du = p.du() as f64;
    let mut per_step = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let sig_x = marginals[t].cov.view((0, 0), (dx, dx)).into_owned();
        let mu_x = marginals[t].mean.rows(0, dx).into_owned();
        let chol_prev = spd_cholesky(&prev.covs[t])?;
        let chol_p = spd_cholesky(&p.covs[t])?;
        let log_det_prev =
            2.0 * chol_prev.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_det_p = 2.0 * chol_p.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let trace = chol_prev.solve(&p.covs[t]).trace();
        let dk = &p.gains[t] - &prev.gains[t];
        let dmu = &dk * &mu_x + (&p.offsets[t] - &prev.offsets[t]);
        let maha = dmu.dot(&chol_prev.solve(&dmu));
        let spread = (chol_prev.solve(&(&dk * &sig_x * dk.transpose()))).trace();
        let kl =
            0.5 * (trace + maha + spread - du + log_det_prev - log_det_p);
        per_step.push(kl.max(0.0));
    }
    let total = per_step.iter().sum();
    Ok((per_step, total))
}

/// Maximum-entropy objective value of a controller under a surrogate:
/// expected surrogate cost minus the controller's conditional entropy.
pub fn surrogate_objective(
    surrogate: &SurrogateCost,
    controller: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    initial: &Gaussian,
) -> Result<f64> {
    let expected =
        crate::lqr::expected_cost(&surrogate.expansion, controller, dynamics, initial)?;
    Ok(expected - controller.entropy()?)
}

/// One constrained controller update: bisection on the step multiplier until
/// the achieved divergence sits within tolerance of `epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn kl_step(
    cost: &QuadraticCostExpansion,
    lambda: &[DVector<f64>],
    nu: &[f64],
    policy_lin: &LinearizedPolicy,
    prev: &LinearGaussianController,
    dynamics: &LinearGaussianDynamics,
    initial: &Gaussian,
    epsilon: f64,
    options: &KlStepOptions,
) -> Result<StepResult> {
    if epsilon <= 0.0 {
        return Err(GpsError::InvalidConfig("epsilon must be positive".into()));
    }
    let solve = |eta: f64| -> Result<(LinearGaussianController, Vec<f64>, f64)> {
        let surrogate = build_surrogate(cost, lambda, nu, policy_lin, prev, eta)?;
        let (controller, _) = backward_pass(&surrogate.expansion, dynamics)?;
        let (per_step, total) = traj_kl(&controller, prev, dynamics, initial)?;
        Ok((controller, per_step, total))
    };

    let mut iterations = 1;
    let (ctrl_lo, per_lo, kl_lo) = solve(options.eta_min)?;
    if kl_lo <= epsilon {
        return Ok(StepResult {
            controller: ctrl_lo,
            kl_per_step: per_lo,
            kl_total: kl_lo,
            eta: options.eta_min,
            iterations,
            status: StepStatus::ConstraintInactive,
        });
    }

    iterations += 1;
    let (ctrl_hi, per_hi, kl_hi) = solve(options.eta_max)?;
    if kl_hi > epsilon {
        let (per_step, kl_total) = traj_kl(prev, prev, dynamics, initial)?;
        return Ok(StepResult {
            controller: prev.clone(),
            kl_per_step: per_step,
            kl_total,
            eta: options.eta_max,
            iterations,
            status: StepStatus::StepRejected,
        });
    }

    let mut lo = options.eta_min;
    let mut hi = options.eta_max;
    let mut best = (ctrl_hi, per_hi, kl_hi, options.eta_max);
    while iterations < options.max_iterations {
        iterations += 1;
        let eta = (0.5 * (lo.ln() + hi.ln())).exp();
        let (ctrl, per_step, kl) = solve(eta)?;
        if (kl - epsilon).abs() <= options.kl_tolerance * epsilon {
            return Ok(StepResult {
                controller: ctrl,
                kl_per_step: per_step,
                kl_total: kl,
                eta,
                iterations,
                status: StepStatus::ConstrainedOptimum,
            });
        }
        if kl > epsilon {
            lo = eta;
        } else {
            hi = eta;
            best = (ctrl, per_step, kl, eta);
        }
    }
    let (controller, kl_per_step, kl_total, eta) = best;
    Ok(StepResult {
        controller,
        kl_per_step,
        kl_total,
        eta,
        iterations,
        status: StepStatus::ConstrainedOptimum,
    })
}
