//! Cross-entropy method and reward-weighted regression over the flattened
//! parameters of time-varying linear feedback controllers. The two methods
//! share one weighted-refit routine and differ only in how rollout costs
//! become sample weights.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::GpsError;
use crate::gps::metrics::{IterationMetrics, METRICS_SCHEMA_VERSION};
use crate::gps::{init_pd_controller, mix_seed};
use crate::lqr::LinearGaussianController;
use crate::Result;

const COV_FLOOR: f64 = 1e-8;

/// Search distribution over flattened controller parameters: a mean vector
/// with diagonal covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamDistribution {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl ParamDistribution {
    pub fn new(mean: DVector<f64>, variance: f64) -> Self {
        let n = mean.len();
        Self { mean, variance: DVector::from_element(n, variance.max(COV_FLOOR)) }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        DVector::from_fn(self.mean.len(), |i, _| {
            self.mean[i] + self.variance[i].sqrt() * crate::gauss::standard_normal(rng)
        })
    }

    /// Weighted moment refit with the covariance floor applied.
    fn refit(&mut self, samples: &[DVector<f64>], weights: &[f64]) {
        let total: f64 = weights.iter().sum();
        let n = self.mean.len();
        let mut mean = DVector::zeros(n);
        for (s, &w) in samples.iter().zip(weights) {
            mean += s * w;
        }
        mean /= total;
        let mut var = DVector::zeros(n);
        for (s, &w) in samples.iter().zip(weights) {
            for i in 0..n {
                var[i] += w * (s[i] - mean[i]).powi(2);
            }
        }
        var /= total;
        for v in var.iter_mut() {
            *v = v.max(COV_FLOOR);
        }
        self.mean = mean;
        self.variance = var;
    }
}

/// Refit to the lowest-cost fraction of the batch. Ties break toward the
/// lower sample index.
pub fn cem_update(
    dist: &mut ParamDistribution,
    samples: &[DVector<f64>],
    costs: &[f64],
    elite_fraction: f64,
) -> Result<()> {
    if samples.len() < 2 || samples.len() != costs.len() {
        return Err(GpsError::InvalidConfig("need at least 2 scored samples".into()));
    }
    if !(0.0 < elite_fraction && elite_fraction <= 1.0) {
        return Err(GpsError::InvalidConfig("elite fraction must be in (0, 1]".into()));
    }
    let n_elite = ((samples.len() as f64 * elite_fraction).round() as usize)
        .clamp(1, samples.len());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| costs[a].partial_cmp(&costs[b]).unwrap().then(a.cmp(&b)));
    let elites: Vec<DVector<f64>> =
        order[..n_elite].iter().map(|&i| samples[i].clone()).collect();
    let weights = vec![1.0; n_elite];
    dist.refit(&elites, &weights);
    Ok(())
}

/// Refit with weights proportional to `exp(-beta (cost - min cost))`.
pub fn rwr_update(
    dist: &mut ParamDistribution,
    samples: &[DVector<f64>],
    costs: &[f64],
    beta: f64,
) -> Result<()> {
    if samples.len() < 2 || samples.len() != costs.len() {
        return Err(GpsError::InvalidConfig("need at least 2 scored samples".into()));
    }
    if beta < 0.0 {
        return Err(GpsError::InvalidConfig("temperature must be non-negative".into()));
    }
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = costs.iter().map(|&c| (-beta * (c - min)).exp()).collect();
    dist.refit(samples, &weights);
    Ok(())
}

/// Temperature rule: the best sample gets weight `e` times the median one.
pub fn auto_beta(costs: &[f64]) -> f64 {
    let mut sorted = costs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let min = sorted[0];
    let median = sorted[sorted.len() / 2];
    if median > min {
        1.0 / (median - min)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Cem,
    Rwr,
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cem => "cem",
            Self::Rwr => "rwr",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub samples_per_iteration: usize,
    pub iterations: usize,
    pub elite_fraction: f64,
    pub exploration_variance: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            method: BaselineMethod::Cem,
            samples_per_iteration: 20,
            iterations: 10,
            elite_fraction: 0.2,
            exploration_variance: 0.01,
            seed: 0,
        }
    }
}

/// Flatten a controller's gains and offsets (the exploration covariance is
/// not part of the search space).
pub fn flatten_controller(c: &LinearGaussianController) -> DVector<f64> {
    let mut out = Vec::new();
    for t in 0..c.horizon() {
        out.extend(c.gains[t].iter());
        out.extend(c.offsets[t].iter());
    }
    DVector::from_vec(out)
}

pub fn unflatten_controller(
    params: &DVector<f64>,
    horizon: usize,
    dx: usize,
    du: usize,
) -> LinearGaussianController {
    let per_t = du * dx + du;
    let mut gains = Vec::with_capacity(horizon);
    let mut offsets = Vec::with_capacity(horizon);
    for t in 0..horizon {
        let base = t * per_t;
        let gain = DMatrix::from_fn(du, dx, |r, c| params[base + c * du + r]);
        let offset = DVector::from_fn(du, |r, _| params[base + du * dx + r]);
        gains.push(gain);
        offsets.push(offset);
    }
    LinearGaussianController {
        covs: vec![DMatrix::identity(du, du) * 1e-12; horizon],
        gains,
        offsets,
    }
}

/// Deterministic rollout cost and final distance of a parameter vector on
/// one condition.
fn score(env: &dyn Environment, params: &DVector<f64>) -> Result<(f64, f64)> {
    let controller =
        unflatten_controller(params, env.horizon(), env.state_dim(), env.action_dim());
    let rollout = crate::gps::mean_rollout(env, &controller)?;
    let dist = env.target_distance(rollout.states.last().unwrap());
    Ok((rollout.total_cost(), dist))
}

/// Run a baseline: an independent search distribution per condition, each
/// updated from `samples_per_iteration` scored rollouts per iteration.
/// Metrics use the same schema as the main trainer.
pub fn run_baseline(
    envs: &[Box<dyn Environment>],
    config: &BaselineConfig,
    init_noise: f64,
) -> Result<Vec<IterationMetrics>> {
    if envs.is_empty() {
        return Err(GpsError::InvalidConfig("no conditions".into()));
    }
    if config.samples_per_iteration < 2 {
        return Err(GpsError::InvalidConfig("need at least 2 samples per iteration".into()));
    }
    let mut dists: Vec<ParamDistribution> = envs
        .iter()
        .map(|e| {
            let pd = init_pd_controller(e.as_ref(), init_noise)?;
            Ok(ParamDistribution::new(
                flatten_controller(&pd),
                config.exploration_variance,
            ))
        })
        .collect::<Result<_>>()?;

    let mut metrics = Vec::with_capacity(config.iterations);
    let mut total_samples = 0usize;
    for iter in 0..config.iterations {
        let mut costs_all = Vec::new();
        let mut dists_all = Vec::new();
        for (i, env) in envs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                config.seed,
                iter as u64,
                i as u64,
            ]));
            let samples: Vec<DVector<f64>> = (0..config.samples_per_iteration)
                .map(|_| dists[i].sample(&mut rng))
                .collect();
            let scored: Vec<(f64, f64)> = samples
                .par_iter()
                .map(|p| score(env.as_ref(), p))
                .collect::<Result<_>>()?;
            total_samples += samples.len();
            let costs: Vec<f64> = scored.iter().map(|s| s.0).collect();
            match config.method {
                BaselineMethod::Cem => {
                    cem_update(&mut dists[i], &samples, &costs, config.elite_fraction)?
                }
                BaselineMethod::Rwr => {
                    let beta = auto_beta(&costs);
                    rwr_update(&mut dists[i], &samples, &costs, beta)?
                }
            }
            // Evaluate the refit mean.
            let (cost, dist) = score(env.as_ref(), &dists[i].mean)?;
            costs_all.push(cost);
            dists_all.push(dist);
        }
        metrics.push(IterationMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            method: config.method.name().into(),
            phase: "main".into(),
            iteration: iter,
            total_samples,
            mean_cost: costs_all.iter().sum::<f64>() / costs_all.len() as f64,
            mean_final_distance: dists_all.iter().sum::<f64>() / dists_all.len() as f64,
            min_final_distance: dists_all.iter().cloned().fold(f64::INFINITY, f64::min),
            mean_final_distance_det: dists_all.iter().sum::<f64>() / dists_all.len() as f64,
            kl_policy_controller: vec![],
            lambda_norm: 0.0,
            nu_min: 0.0,
            nu_max: 0.0,
            eta: vec![],
            step_status: vec![],
            stalled: false,
            policy_loss: 0.0,
        });
    }
    Ok(metrics)
}

/// Elite-fraction sweep: run the baseline at each setting and keep the one
/// with the lowest final distance. Returns (best fraction, its metrics).
pub fn sweep_elite_fraction(
    envs: &[Box<dyn Environment>],
    base: &BaselineConfig,
    init_noise: f64,
    fractions: &[f64],
) -> Result<(f64, Vec<IterationMetrics>)> {
    let mut best: Option<(f64, Vec<IterationMetrics>)> = None;
    for &f in fractions {
        let mut config = base.clone();
        config.elite_fraction = f;
        let metrics = run_baseline(envs, &config, init_noise)?;
        let final_dist = metrics.last().map(|m| m.mean_final_distance).unwrap_or(f64::MAX);
        if best
            .as_ref()
            .map(|(_, m)| final_dist < m.last().unwrap().mean_final_distance)
            .unwrap_or(true)
        {
            best = Some((f, metrics));
        }
    }
    Ok(best.expect("at least one fraction"))
}
