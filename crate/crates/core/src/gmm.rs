//! Gaussian mixture model over transition tuples `[x; u; x']`, fitted by EM,
//! plus the conversion from posterior-weighted mixture moments to a
//! normal-inverse-Wishart prior for per-timestep regression.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GpsError;
use crate::gauss::{
    empirical_moments, log_density_chol, regularize_spd, spd_cholesky, Gaussian, NiwPrior,
};
use crate::Result;

const COV_FLOOR: f64 = 1e-6;
const LL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

impl GaussianMixture {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    /// Posterior responsibility of each component for a single datum.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let mut log_terms = Vec::with_capacity(self.k());
        for (w, comp) in self.weights.iter().zip(&self.components) {
            let chol = spd_cholesky(&comp.cov)?;
            log_terms.push(w.max(1e-300).ln() + log_density_chol(&comp.mean, &chol, x));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut resp: Vec<f64> = log_terms.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = resp.iter().sum();
        for r in &mut resp {
            *r /= total;
        }
        Ok(resp)
    }

    /// Mixture log density at a single datum.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let mut log_terms = Vec::with_capacity(self.k());
        for (w, comp) in self.weights.iter().zip(&self.components) {
            let chol = spd_cholesky(&comp.cov)?;
            log_terms.push(w.max(1e-300).ln() + log_density_chol(&comp.mean, &chol, x));
        }
        let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(max + log_terms.iter().map(|l| (l - max).exp()).sum::<f64>().ln())
    }
}

/// Mixture size rule: one component per 40 samples, between 1 and 20.
pub fn choose_k(sample_count: usize) -> usize {
    (sample_count / 40).clamp(1, 20)
}

/// Fit a K-component mixture by EM with k-means++-style seeding.
///
/// Runs until the log-likelihood improves by less than 1e-6 or `max_iters`
/// is reached. A component that loses all responsibility mass is re-seeded
/// from a random datum.
pub fn fit_gmm(
    data: &[DVector<f64>],
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<GaussianMixture> {
    if k == 0 {
        return Err(GpsError::InvalidConfig("mixture size must be at least 1".into()));
    }
    if data.len() < k {
        return Err(GpsError::InsufficientData { t: 0, have: data.len(), need: k });
    }
    let d = data[0].len();
    let n = data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (_, global_cov) = empirical_moments(data);
    let base_cov = regularize_spd(&(global_cov + DMatrix::identity(d, d) * COV_FLOOR))?;

    let mut mixture = GaussianMixture {
        weights: vec![1.0 / k as f64; k],
        components: seed_means(data, k, &mut rng)
            .into_iter()
            .map(|mean| Gaussian::new(mean, base_cov.clone()))
            .collect(),
    };

    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        // E step.
        let chols: Vec<_> = mixture
            .components
            .iter()
            .map(|c| spd_cholesky(&c.cov))
            .collect::<Result<_>>()?;
        let mut resp = DMatrix::zeros(n, k);
        let mut ll = 0.0;
        for (i, x) in data.iter().enumerate() {
            let mut log_terms = vec![0.0; k];
            for j in 0..k {
                log_terms[j] = mixture.weights[j].max(1e-300).ln()
                    + log_density_chol(&mixture.components[j].mean, &chols[j], x);
            }
            let max = log_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = log_terms.iter().map(|l| (l - max).exp()).sum();
            ll += max + total.ln();
            for j in 0..k {
                resp[(i, j)] = (log_terms[j] - max).exp() / total;
            }
        }

        // M step.
        let mut reseeded = false;
        for j in 0..k {
            let mass: f64 = (0..n).map(|i| resp[(i, j)]).sum();
            if mass < 1e-9 {
                let pick = rng.gen_range(0..n);
                mixture.components[j] = Gaussian::new(data[pick].clone(), base_cov.clone());
                mixture.weights[j] = 1.0 / n as f64;
                reseeded = true;
                continue;
            }
            let mut mean = DVector::zeros(d);
            for (i, x) in data.iter().enumerate() {
                mean += x * resp[(i, j)];
            }
            mean /= mass;
            let mut cov = DMatrix::zeros(d, d);
            for (i, x) in data.iter().enumerate() {
                let diff = x - &mean;
                cov += &diff * diff.transpose() * resp[(i, j)];
            }
            cov /= mass;
            cov += DMatrix::identity(d, d) * COV_FLOOR;
            mixture.components[j] = Gaussian::new(mean, regularize_spd(&cov)?);
            mixture.weights[j] = mass / n as f64;
        }
        let wsum: f64 = mixture.weights.iter().sum();
        for w in &mut mixture.weights {
            *w /= wsum;
        }

        if reseeded {
            prev_ll = f64::NEG_INFINITY;
        } else {
            if (ll - prev_ll).abs() < LL_TOL {
                break;
            }
            prev_ll = ll;
        }
    }
    Ok(mixture)
}

/// Posterior-weighted mixture moments for a batch of tuples, packaged as an
/// NIW prior: Phi = n0 * Sigma_bar, mu0 = mu_bar.
///
/// Datum-level responsibilities are averaged over the batch; the mixed
/// covariance includes the spread between component means.
pub fn infer_prior(
    gmm: &GaussianMixture,
    batch: &[DVector<f64>],
    pseudo_counts: (f64, f64),
) -> Result<NiwPrior> {
    if batch.is_empty() {
        return Err(GpsError::InsufficientData { t: 0, have: 0, need: 1 });
    }
    let (m, n0) = pseudo_counts;
    let k = gmm.k();
    let d = gmm.dim();
    let mut weights = vec![0.0; k];
    for x in batch {
        let resp = gmm.responsibilities(x)?;
        for j in 0..k {
            weights[j] += resp[j];
        }
    }
    for w in &mut weights {
        *w /= batch.len() as f64;
    }

    let mut mu_bar = DVector::zeros(d);
    for j in 0..k {
        mu_bar += &gmm.components[j].mean * weights[j];
    }
    let mut sigma_bar = DMatrix::zeros(d, d);
    for j in 0..k {
        let diff = &gmm.components[j].mean - &mu_bar;
        sigma_bar += (&gmm.components[j].cov + &diff * diff.transpose()) * weights[j];
    }
    Ok(NiwPrior { phi: sigma_bar * n0, mu0: mu_bar, m, n0 })
}

/// k-means++-style seeding: first mean uniform, later means drawn with
/// probability proportional to squared distance from the nearest chosen mean.
fn seed_means(data: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<DVector<f64>> {
    let n = data.len();
    let mut means = Vec::with_capacity(k);
    means.push(data[rng.gen_range(0..n)].clone());
    let mut dist2: Vec<f64> = data.iter().map(|x| (x - &means[0]).norm_squared()).collect();
    while means.len() < k {
        let total: f64 = dist2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut threshold = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d2) in dist2.iter().enumerate() {
                threshold -= d2;
                if threshold <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        means.push(data[pick].clone());
        for (i, x) in data.iter().enumerate() {
            dist2[i] = dist2[i].min((x - &means[means.len() - 1]).norm_squared());
        }
    }
    means
}
