//! The conditional Gaussian policy `pi(u|o) = N(mu(o), Sigma)`: a small
//! network for the mean, an observation-independent covariance, the
//! supervised training objective that matches the policy to the per-condition
//! controllers, and the replay machinery with importance weighting.

pub mod checkpoint;
pub mod net;
pub mod pretrain;
pub mod spatial;

pub use net::{FrontendHead, Network, NetworkSpec, Nonlinearity, SgdMomentum, VisionSpec};
pub use spatial::spatial_softmax_points;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GpsError;
use crate::gauss::{clamp_spd, spd_cholesky, Gaussian};
use crate::Result;

/// Conditional Gaussian policy with an observation-independent covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Network,
    pub sigma: DMatrix<f64>,
}

impl GaussianPolicy {
    pub fn new(net: Network) -> Self {
        let du = net.spec.action_dim;
        Self { net, sigma: DMatrix::identity(du, du) }
    }

    pub fn action_dim(&self) -> usize {
        self.net.spec.action_dim
    }

    /// Deterministic mean action.
    pub fn mean(&self, obs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.net.forward(obs)?.0)
    }

    /// Sample an action from `N(mean(obs), Sigma)`.
    pub fn sample<R: Rng>(&self, obs: &DVector<f64>, rng: &mut R) -> Result<DVector<f64>> {
        let mean = self.mean(obs)?;
        Gaussian::new(mean, self.sigma.clone()).sample(rng)
    }
}

/// One supervised training example: an observation paired with the
/// controller's conditional moments at the recorded state.
#[derive(Debug, Clone)]
pub struct TrainingItem {
    pub obs: DVector<f64>,
    /// Controller mean action at the recorded state.
    pub target_mean: DVector<f64>,
    /// Controller precision C^{-1} at that step.
    pub precision: DMatrix<f64>,
    /// Action Lagrange multiplier at that step.
    pub lambda: DVector<f64>,
    /// Importance weight (1 for on-distribution samples).
    pub weight: f64,
}

/// Weighted supervised loss and its gradient with respect to the network
/// parameters.
///
/// Per item: `0.5 [ tr(C^{-1} Sigma) - ln|Sigma| + (mu - mu_p)^T C^{-1}
/// (mu - mu_p) + 2 lambda^T mu ]`, averaged with the item weights. The
/// covariance terms are constants with respect to the mean network, so only
/// the quadratic and multiplier terms are backpropagated; Sigma itself is
/// updated in closed form by [`update_sigma`].
pub fn supervised_loss_and_grad(
    policy: &GaussianPolicy,
    items: &[TrainingItem],
) -> Result<(f64, DVector<f64>)> {
    if items.is_empty() {
        return Err(GpsError::InvalidConfig("empty training batch".into()));
    }
    let chol_sigma = spd_cholesky(&policy.sigma)?;
    let log_det_sigma =
        2.0 * chol_sigma.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    let mut grad = DVector::zeros(policy.net.param_count());
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for item in items {
        let (mean, cache) = policy.net.forward(&item.obs)?;
        let diff = &mean - &item.target_mean;
        let quad = diff.dot(&(&item.precision * &diff));
        let trace = (&item.precision * &policy.sigma).trace();
        let item_loss = 0.5
            * (trace - log_det_sigma + quad + 2.0 * item.lambda.dot(&mean));
        loss += item.weight * item_loss;
        total_weight += item.weight;

        let mut dmean = &item.precision * &diff + &item.lambda;
        dmean *= item.weight;
        policy.net.backward(&cache, &dmean, &mut grad);
    }
    if total_weight <= 0.0 {
        return Err(GpsError::InvalidConfig("non-positive total batch weight".into()));
    }
    Ok((loss / total_weight, grad / total_weight))
}

/// Closed-form covariance update: the harmonic mean of the controller
/// covariances, `Sigma = [ (1/(N T)) sum C_ti^{-1} ]^{-1}`.
pub fn update_sigma(controller_covs: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    if controller_covs.is_empty() {
        return Err(GpsError::InvalidConfig("no controller covariances".into()));
    }
    let du = controller_covs[0].nrows();
    let mut precision_sum = DMatrix::zeros(du, du);
    for cov in controller_covs {
        let chol = spd_cholesky(cov)?;
        precision_sum += chol.inverse();
    }
    precision_sum /= controller_covs.len() as f64;
    let chol = spd_cholesky(&precision_sum)?;
    clamp_spd(&chol.inverse())
}

/// Importance weights for replayed tuples: the ratio of the current state
/// density to the density the tuple was collected under, clipped to
/// `[1e-2, 1e2]` and normalized to mean one within the batch.
pub fn importance_weights(
    states: &[DVector<f64>],
    origins: &[&Gaussian],
    currents: &[&Gaussian],
) -> Result<Vec<f64>> {
    if states.len() != origins.len() || states.len() != currents.len() {
        return Err(GpsError::DimensionMismatch {
            expected: states.len(),
            got: origins.len().min(currents.len()),
        });
    }
    let mut weights = Vec::with_capacity(states.len());
    for ((x, origin), current) in states.iter().zip(origins).zip(currents) {
        let ratio = (current.log_density(x)? - origin.log_density(x)?).exp();
        weights.push(ratio.clamp(1e-2, 1e2));
    }
    let mean: f64 = weights.iter().sum::<f64>() / weights.len() as f64;
    for w in &mut weights {
        *w /= mean;
    }
    Ok(weights)
}

/// A replayed observation tuple: the observation, the state it came from,
/// its timestep and condition, the iteration it was collected in, and the
/// state marginal it was sampled under.
#[derive(Debug, Clone)]
pub struct ReplayEntry {
    pub condition: usize,
    pub t: usize,
    pub iteration: usize,
    pub obs: DVector<f64>,
    pub state: DVector<f64>,
    pub origin: Gaussian,
}

/// Observation store spanning a bounded window of iterations.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    pub window: usize,
    entries: Vec<ReplayEntry>,
}

impl ReplayBuffer {
    pub fn new(window: usize) -> Self {
        Self { window, entries: Vec::new() }
    }

    pub fn push(&mut self, entry: ReplayEntry) {
        self.entries.push(entry);
    }

    /// Drop entries older than the window relative to `current_iteration`.
    pub fn prune(&mut self, current_iteration: usize) {
        let window = self.window;
        self.entries
            .retain(|e| current_iteration.saturating_sub(e.iteration) <= window);
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simple_policy(seed: u64) -> GaussianPolicy {
        GaussianPolicy::new(Network::init(NetworkSpec::state_policy(3, 2, vec![4]), seed))
    }

    #[test]
    fn matching_means_leave_only_covariance_terms() {
        let policy = simple_policy(1);
        let obs = DVector::from_row_slice(&[0.2, -0.4, 0.9]);
        let mean = policy.mean(&obs).unwrap();
        let precision = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let items = vec![TrainingItem {
            obs,
            target_mean: mean,
            precision: precision.clone(),
            lambda: DVector::zeros(2),
            weight: 1.0,
        }];
        let (loss, grad) = supervised_loss_and_grad(&policy, &items).unwrap();
        // Sigma = I: loss = 0.5 (tr(C^{-1}) - ln 1).
        assert_relative_eq!(loss, 0.5 * 2.5, epsilon = 1e-12);
        assert_relative_eq!(grad.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut policy = simple_policy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let items: Vec<TrainingItem> = (0..6)
            .map(|_| {
                let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.5..0.5));
                let precision = &a * a.transpose() + DMatrix::identity(2, 2);
                TrainingItem {
                    obs: DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
                    target_mean: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                    precision,
                    lambda: DVector::from_fn(2, |_, _| rng.gen_range(-0.2..0.2)),
                    weight: rng.gen_range(0.5..2.0),
                }
            })
            .collect();
        let (_, grad) = supervised_loss_and_grad(&policy, &items).unwrap();
        let params = policy.net.get_params();
        let eps = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += eps;
            policy.net.set_params(&p);
            let (up, _) = supervised_loss_and_grad(&policy, &items).unwrap();
            p[i] -= 2.0 * eps;
            policy.net.set_params(&p);
            let (down, _) = supervised_loss_and_grad(&policy, &items).unwrap();
            let fd = (up - down) / (2.0 * eps);
            assert_relative_eq!(fd, grad[i], epsilon = 1e-7, max_relative = 1e-4);
            policy.net.set_params(&params);
        }
    }

    #[test]
    fn sgd_descends_on_fixed_batch() {
        let mut policy = simple_policy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let items: Vec<TrainingItem> = (0..8)
            .map(|_| TrainingItem {
                obs: DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)),
                target_mean: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
                precision: DMatrix::identity(2, 2),
                lambda: DVector::zeros(2),
                weight: 1.0,
            })
            .collect();
        let mut opt = SgdMomentum::new(1e-3, 0.9, policy.net.param_count());
        let (first, _) = supervised_loss_and_grad(&policy, &items).unwrap();
        let mut losses = vec![first];
        for _ in 0..50 {
            let (loss, grad) = supervised_loss_and_grad(&policy, &items).unwrap();
            opt.step(&mut policy.net, &grad);
            losses.push(loss);
        }
        let (last, _) = supervised_loss_and_grad(&policy, &items).unwrap();
        assert!(
            last < losses[0],
            "loss did not decrease: {} -> {last}",
            losses[0]
        );
        // Trend over the window is strictly downward.
        let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
        let late: f64 = losses[losses.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(late < early);
    }

    #[test]
    fn sigma_update_closed_forms() {
        let c = DMatrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.9]);
        let out = update_sigma(&[&c, &c, &c]).unwrap();
        assert_relative_eq!(out, c, epsilon = 1e-10);

        let single = update_sigma(&[&c]).unwrap();
        assert_relative_eq!(single, c, epsilon = 1e-10);

        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let h = update_sigma(&[&a, &b]).unwrap();
        // Harmonic mean of (1, 4) is 1.6.
        assert_relative_eq!(h[(0, 0)], 1.6, epsilon = 1e-10);
        assert_relative_eq!(h[(1, 1)], 1.6, epsilon = 1e-10);
    }

    #[test]
    fn sigma_update_is_stationary_point() {
        // Directional finite-difference of the covariance part of the loss
        // around the closed-form optimum is flat.
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.8, -0.1, -0.1, 1.4]);
        let covs: Vec<&DMatrix<f64>> = vec![&a, &b];
        let sigma = update_sigma(&covs).unwrap();
        let objective = |s: &DMatrix<f64>| -> f64 {
            let chol = spd_cholesky(s).unwrap();
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            covs.iter()
                .map(|c| {
                    let p = spd_cholesky(c).unwrap().inverse();
                    0.5 * ((&p * s).trace() - log_det)
                })
                .sum::<f64>()
                / covs.len() as f64
        };
        let base = objective(&sigma);
        let eps = 1e-5;
        for dir in [
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]),
        ] {
            let up = objective(&(&sigma + &dir * eps));
            let down = objective(&(&sigma - &dir * eps));
            let slope = (up - down) / (2.0 * eps);
            assert!(slope.abs() < 1e-8, "slope {slope} along {dir:?}");
            assert!(up >= base - 1e-12 && down >= base - 1e-12);
        }
    }

    #[test]
    fn importance_weights_behave() {
        let origin = Gaussian::isotropic(DVector::zeros(2), 1.0);
        let shifted = Gaussian::isotropic(DVector::from_row_slice(&[3.0, 0.0]), 1.0);
        let states = vec![
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[3.0, 0.0]),
        ];
        // Same distribution: ratios are 1 before normalization.
        let w = importance_weights(
            &states,
            &[&origin, &origin],
            &[&origin, &origin],
        )
        .unwrap();
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(w[1], 1.0, epsilon = 1e-12);

        // A state far from its origin under the current distribution clips.
        let far = DVector::from_row_slice(&[10.0, 0.0]);
        let w = importance_weights(
            &[far.clone(), DVector::zeros(2)],
            &[&origin, &origin],
            &[&shifted, &origin],
        )
        .unwrap();
        // Before normalization the first ratio hits the upper bound and the
        // second is exactly 1; mean-normalization preserves their ratio.
        assert_relative_eq!(w[0] / w[1], 1e2, epsilon = 1e-9);
    }

    #[test]
    fn density_ratio_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let origin = Gaussian::isotropic(DVector::zeros(2), 2.0);
        let current = Gaussian::isotropic(DVector::from_row_slice(&[0.5, -0.2]), 1.5);
        for _ in 0..10 {
            let x = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
            let w = importance_weights(std::slice::from_ref(&x), &[&origin], &[&current]).unwrap();
            // Single-element batch: normalization divides by itself.
            assert_relative_eq!(w[0], 1.0, epsilon = 1e-12);
            // Check the raw ratio through the log densities directly.
            let expected =
                (current.log_density(&x).unwrap() - origin.log_density(&x).unwrap()).exp();
            let two = importance_weights(
                &[x.clone(), x.clone()],
                &[&origin, &origin],
                &[&current, &origin],
            )
            .unwrap();
            assert_relative_eq!(two[0] / two[1], expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn replay_buffer_window() {
        let mut buf = ReplayBuffer::new(3);
        for iter in 0..6 {
            buf.push(ReplayEntry {
                condition: 0,
                t: 0,
                iteration: iter,
                obs: DVector::zeros(1),
                state: DVector::zeros(1),
                origin: Gaussian::isotropic(DVector::zeros(1), 1.0),
            });
        }
        buf.prune(5);
        assert_eq!(buf.len(), 4); // iterations 2..=5
        assert!(buf.entries().iter().all(|e| e.iteration >= 2));
    }
}
