//! Time-varying linear-Gaussian model fitting from rollout samples.
//!
//! Both the dynamics `p(x_{t+1}|x_t,u_t)` and the policy linearization share
//! one code path: fit a joint Gaussian over stacked vectors (optionally
//! regularized by a mixture-model prior) and condition on the input block.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::GpsError;
use crate::gauss::{
    condition, empirical_moments, niw_map, symmetrized, Gaussian, LinearGaussianConditional,
    NiwMeanRule, NiwPrior,
};
use nalgebra::DMatrix as Dm;
use crate::gmm::{infer_prior, GaussianMixture};
use crate::sample::TrajectorySample;
use crate::Result;

/// Prior used when fitting a joint Gaussian to a small regression batch.
#[derive(Debug, Clone, Copy)]
pub enum RegressionPrior<'a> {
    /// Plain empirical fit (equivalent to least squares).
    None,
    /// Normal-inverse-Wishart prior built from mixture-model moments.
    Gmm { gmm: &'a GaussianMixture, pseudo_counts: (f64, f64) },
    /// Explicit prior parameters.
    Fixed(&'a NiwPrior),
}

/// Per-timestep linear-Gaussian dynamics over a horizon of `T` steps:
/// `T - 1` transition models.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearGaussianDynamics {
    pub fx: Vec<DMatrix<f64>>,
    pub fu: Vec<DMatrix<f64>>,
    pub fc: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
    pub dx: usize,
    pub du: usize,
}

impl LinearGaussianDynamics {
    /// Number of transition models (horizon minus one).
    pub fn steps(&self) -> usize {
        self.fx.len()
    }

    /// Exact dynamics for a known linear system, identical at every step.
    pub fn time_invariant(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DVector<f64>,
        noise: DMatrix<f64>,
        steps: usize,
    ) -> Self {
        Self {
            dx: a.nrows(),
            du: b.ncols(),
            fx: vec![a; steps],
            fu: vec![b; steps],
            fc: vec![c; steps],
            cov: vec![noise; steps],
        }
    }
}

/// Per-timestep linearization of the policy mean, with the policy covariance
/// attached at every step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearizedPolicy {
    pub gains: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl LinearizedPolicy {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

/// Fit a joint Gaussian to stacked vectors and condition on the first
/// `split` coordinates. This is the shared machinery behind dynamics
/// fitting and policy linearization.
pub fn fit_conditional(
    vectors: &[DVector<f64>],
    split: usize,
    prior: RegressionPrior<'_>,
    rule: NiwMeanRule,
) -> Result<LinearGaussianConditional> {
    if vectors.len() < 2 {
        return Err(GpsError::InsufficientData { t: 0, have: vectors.len(), need: 2 });
    }
    let (mean, cov) = empirical_moments(vectors);
    let joint = match prior {
        RegressionPrior::None => Gaussian::new(mean, symmetrized(&cov)),
        RegressionPrior::Gmm { gmm, pseudo_counts } => {
            let niw = infer_prior(gmm, vectors, pseudo_counts)?;
            niw_map(&mean, &cov, vectors.len(), &niw, rule)?
        }
        RegressionPrior::Fixed(niw) => niw_map(&mean, &cov, vectors.len(), niw, rule)?,
    };
    condition(&joint, split)
}

/// Fit the transition model at step `t` from the given samples.
pub fn fit_dynamics_at(
    samples: &[TrajectorySample],
    t: usize,
    prior: RegressionPrior<'_>,
    rule: NiwMeanRule,
) -> Result<LinearGaussianConditional> {
    let tuples: Vec<DVector<f64>> =
        samples.iter().map(|s| s.transition_tuple(t)).collect();
    if tuples.len() < 2 {
        return Err(GpsError::InsufficientData { t, have: tuples.len(), need: 2 });
    }
    let dx = samples[0].states[0].len();
    let du = samples[0].actions[0].len();
    fit_conditional(&tuples, dx + du, prior, rule)
        .map_err(|e| annotate_step(e, t))
}

/// Fit the full time-varying dynamics from current-iteration samples.
///
/// The samples form the per-timestep regression batch; the prior (typically
/// a mixture model fitted on a longer history window) supplies the missing
/// rank when batches are small. Pooling samples from several conditions
/// yields a shared model.
pub fn fit_dynamics(
    samples: &[TrajectorySample],
    prior: RegressionPrior<'_>,
    rule: NiwMeanRule,
) -> Result<LinearGaussianDynamics> {
    if samples.is_empty() {
        return Err(GpsError::InsufficientData { t: 0, have: 0, need: 2 });
    }
    let horizon = samples[0].horizon();
    let dx = samples[0].states[0].len();
    let du = samples[0].actions[0].len();
    let mut dyn_model = LinearGaussianDynamics {
        fx: Vec::with_capacity(horizon - 1),
        fu: Vec::with_capacity(horizon - 1),
        fc: Vec::with_capacity(horizon - 1),
        cov: Vec::with_capacity(horizon - 1),
        dx,
        du,
    };
    for t in 0..horizon - 1 {
        let cond = fit_dynamics_at(samples, t, prior, rule)?;
        dyn_model.fx.push(cond.gain.columns(0, dx).into_owned());
        dyn_model.fu.push(cond.gain.columns(dx, du).into_owned());
        dyn_model.fc.push(cond.offset);
        dyn_model.cov.push(cond.cov);
    }
    Ok(dyn_model)
}

/// Linearize the policy mean at step `t` from `(state, expected action)`
/// pairs. The conditional covariance is the policy's own and is attached by
/// the caller.
///
/// When the sampled states are nearly collinear (converged controllers draw
/// almost identical rollouts) an unregularized regression amplifies noise
/// along the unexcited directions into huge gains. The state block's
/// eigenvalues are floored at a small fraction of its largest eigenvalue,
/// which caps that amplification and leaves well-spread batches untouched.
pub fn linearize_policy_at(
    pairs: &[(DVector<f64>, DVector<f64>)],
    t: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if pairs.len() < 2 {
        return Err(GpsError::InsufficientData { t, have: pairs.len(), need: 2 });
    }
    let dx = pairs[0].0.len();
    let du = pairs[0].1.len();
    let vectors: Vec<DVector<f64>> = pairs
        .iter()
        .map(|(x, u)| {
            let mut v = DVector::zeros(dx + du);
            v.rows_mut(0, dx).copy_from(x);
            v.rows_mut(dx, du).copy_from(u);
            v
        })
        .collect();
    let (mean, mut cov) = empirical_moments(&vectors);
    let state_block = cov.view((0, 0), (dx, dx)).into_owned();
    let eig = symmetrized(&state_block).symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = (1e-4 * max_eig).max(1e-10);
    let clamped = nalgebra::DVector::from_fn(dx, |i, _| eig.eigenvalues[i].max(floor));
    let repaired =
        &eig.eigenvectors * Dm::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    cov.view_mut((0, 0), (dx, dx)).copy_from(&symmetrized(&repaired));
    let cond =
        condition(&Gaussian::new(mean, cov), dx).map_err(|e| annotate_step(e, t))?;
    Ok((cond.gain, cond.offset))
}

/// Linearize the policy mean at every step, given per-sample policy means
/// (outer index parallels `samples`, inner index is the timestep).
pub fn linearize_policy(
    samples: &[TrajectorySample],
    policy_means: &[Vec<DVector<f64>>],
    sigma: &DMatrix<f64>,
) -> Result<LinearizedPolicy> {
    if samples.is_empty() {
        return Err(GpsError::InsufficientData { t: 0, have: 0, need: 2 });
    }
    let horizon = samples[0].horizon();
    let mut lin = LinearizedPolicy {
        gains: Vec::with_capacity(horizon),
        offsets: Vec::with_capacity(horizon),
        covs: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let pairs: Vec<(DVector<f64>, DVector<f64>)> = samples
            .iter()
            .zip(policy_means)
            .map(|(s, means)| (s.states[t].clone(), means[t].clone()))
            .collect();
        let (gain, offset) = linearize_policy_at(&pairs, t)?;
        lin.gains.push(gain);
        lin.offsets.push(offset);
        lin.covs.push(sigma.clone());
    }
    Ok(lin)
}

fn annotate_step(e: GpsError, t: usize) -> GpsError {
    match e {
        GpsError::InsufficientData { have, need, .. } => {
            GpsError::InsufficientData { t, have, need }
        }
        other => other,
    }
}
