//! Multivariate Gaussian primitives: conditioning, KL divergence, and the
//! normal-inverse-Wishart MAP estimate used to regularize small regressions.
//!
//! Everything here is a pure function of its inputs. Covariances are kept
//! symmetric positive definite by [`regularize_spd`], which symmetrizes and
//! then adds a scaled identity until a Cholesky factorization succeeds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GpsError;
use crate::Result;

/// Numerical tolerance below which two distributions count as equal.
pub const KL_EQUAL_TOL: f64 = 1e-10;

/// A multivariate Gaussian N(mean, cov).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// A conditional law `b | a ~ N(gain * a + offset, cov)`.
///
/// Both the controller `p(u_t|x_t) = N(K_t x_t + k_t, C_t)` and the dynamics
/// `p(x_{t+1}|x_t,u_t) = N(f_x x_t + f_u u_t + f_c, F_t)` are instances of
/// this shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianConditional {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Normal-inverse-Wishart prior parameters (Phi, mu0, m, n0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub phi: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub m: f64,
    pub n0: f64,
}

/// Which weighting the MAP mean uses.
///
/// The two common forms disagree whenever the sample count differs from the
/// covariance pseudo-count: `PseudoCounts` weighs the empirical mean by `n0`,
/// `SampleCount` weighs it by `N`. With the default pseudo-counts of 1 the
/// choice is consequential; `PseudoCounts` is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NiwMeanRule {
    /// mu = (m * mu0 + n0 * mu_hat) / (m + n0)
    #[default]
    PseudoCounts,
    /// mu = (m * mu0 + N * mu_hat) / (m + N)
    SampleCount,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        Self { mean, cov }
    }

    /// Dimension of the support.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Isotropic Gaussian N(mean, scale * I).
    pub fn isotropic(mean: DVector<f64>, scale: f64) -> Self {
        let d = mean.len();
        Self {
            cov: DMatrix::identity(d, d) * scale,
            mean,
        }
    }

    /// Log density at `x`, via Cholesky of the covariance.
    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        let chol = spd_cholesky(&self.cov)?;
        Ok(log_density_chol(&self.mean, &chol, x))
    }

    /// Draw one sample using the covariance's Cholesky factor.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = spd_cholesky(&self.cov)?;
        let z = DVector::from_fn(self.dim(), |_, _| standard_normal(rng));
        Ok(&self.mean + chol.l() * z)
    }
}

impl LinearGaussianConditional {
    /// Mean of the conditional at a given conditioning vector.
    pub fn mean_at(&self, a: &DVector<f64>) -> DVector<f64> {
        &self.gain * a + &self.offset
    }
}

/// Gaussian log density given a precomputed Cholesky factor of the covariance.
pub fn log_density_chol(
    mean: &DVector<f64>,
    chol: &Cholesky<f64, Dyn>,
    x: &DVector<f64>,
) -> f64 {
    let d = mean.len() as f64;
    let diff = x - mean;
    let solved = chol.l().solve_lower_triangular(&diff).expect("triangular solve");
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + solved.norm_squared())
}

/// Standard normal draw from a uniform RNG (Box-Muller).
pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}

/// (A + A^T) / 2.
pub fn symmetrized(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Symmetrize and, if Cholesky fails, add eps * I with eps starting at
/// 1e-9 * trace / d (floored at 1e-12) and doubling until the factorization
/// succeeds. Returns the repaired matrix.
///
/// The shift starts small relative to the matrix scale so that repairing a
/// rank-deficient fit of a noiseless system perturbs the conditional gains
/// by far less than the fit tolerances used downstream.
pub fn regularize_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut sym = symmetrized(a);
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(GpsError::Regularization("non-finite covariance entries".into()));
    }
    if Cholesky::new(sym.clone()).is_some() {
        return Ok(sym);
    }
    let d = sym.nrows();
    let mut eps = (1e-9 * sym.trace() / d as f64).max(1e-12);
    for _ in 0..96 {
        for i in 0..d {
            sym[(i, i)] += eps;
        }
        if Cholesky::new(sym.clone()).is_some() {
            return Ok(sym);
        }
        eps *= 2.0;
    }
    Err(GpsError::Regularization(format!(
        "matrix not repairable after 96 identity shifts (trace {})",
        sym.trace()
    )))
}

/// Cholesky of a symmetric matrix, regularizing first if needed.
pub fn spd_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(chol) = Cholesky::new(symmetrized(a)) {
        return Ok(chol);
    }
    let repaired = regularize_spd(a)?;
    Cholesky::new(repaired)
        .ok_or_else(|| GpsError::Regularization("cholesky failed after repair".into()))
}

/// Symmetrize and clamp eigenvalues from below at
/// `max(1e-12, 1e-12 * trace / d)`.
///
/// Unlike [`regularize_spd`] the clamp always applies, so the output is a
/// continuous function of the input. Used where a conditional jitter would
/// make results depend on rounding (e.g. rank-deficient MAP covariances).
pub fn clamp_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = symmetrized(a);
    if !sym.iter().all(|v| v.is_finite()) {
        return Err(GpsError::Regularization("non-finite covariance entries".into()));
    }
    let d = sym.nrows();
    let floor = (1e-12 * sym.trace() / d as f64).max(1e-12);
    let eig = sym.symmetric_eigen();
    let clamped = DVector::from_fn(d, |i, _| eig.eigenvalues[i].max(floor));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    out = symmetrized(&out);
    Ok(out)
}

/// Condition a joint Gaussian over `[a; b]` on its first `split` coordinates,
/// yielding the conditional law of `b | a`.
///
/// gain = S_ba S_aa^{-1}, offset = mu_b - gain mu_a, and the covariance is
/// the Schur complement S_bb - S_ba S_aa^{-1} S_ab, symmetrized.
pub fn condition(joint: &Gaussian, split: usize) -> Result<LinearGaussianConditional> {
    let d = joint.dim();
    if split == 0 || split >= d {
        return Err(GpsError::InvalidConfig(format!(
            "split index {split} out of range for dimension {d}"
        )));
    }
    let nb = d - split;
    // Only the conditioning block must factor; a joint that is merely
    // positive semi-definite (e.g. a noiseless linear relation) conditions
    // exactly, and jittering it here would bias the gains.
    let cov = symmetrized(&joint.cov);
    if !cov.iter().all(|v| v.is_finite()) {
        return Err(GpsError::Regularization("non-finite joint covariance".into()));
    }
    let s_aa = cov.view((0, 0), (split, split)).into_owned();
    let s_ab = cov.view((0, split), (split, nb)).into_owned();
    let s_bb = cov.view((split, split), (nb, nb)).into_owned();

    let chol_aa = spd_cholesky(&s_aa)?;
    // gain^T = S_aa^{-1} S_ab
    let gain = chol_aa.solve(&s_ab).transpose();
    let mu_a = joint.mean.rows(0, split).into_owned();
    let mu_b = joint.mean.rows(split, nb).into_owned();
    let offset = &mu_b - &gain * &mu_a;
    let cond_cov = regularize_spd(&(&s_bb - &gain * s_ab))?;
    Ok(LinearGaussianConditional { gain, offset, cov: cond_cov })
}

/// Closed-form KL divergence between two Gaussians of equal dimension.
///
/// Returns exactly 0 when the inputs are equal to within arithmetic noise;
/// tiny negative values from rounding are clamped to 0.
pub fn kl_divergence(p: &Gaussian, q: &Gaussian) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(GpsError::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let d = p.dim() as f64;
    let chol_p = spd_cholesky(&p.cov)?;
    let chol_q = spd_cholesky(&q.cov)?;
    let log_det_p = 2.0 * chol_p.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let log_det_q = 2.0 * chol_q.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let q_inv_p = chol_q.solve(&p.cov);
    let diff = &q.mean - &p.mean;
    let maha = diff.dot(&chol_q.solve(&diff));
    let kl = 0.5 * (q_inv_p.trace() + maha - d + log_det_q - log_det_p);
    if kl < 0.0 {
        if kl < -1e-6 {
            return Err(GpsError::Regularization(format!(
                "KL evaluated to {kl}, far below zero"
            )));
        }
        return Ok(0.0);
    }
    Ok(kl)
}

/// Maximum a posteriori Gaussian under a normal-inverse-Wishart prior.
///
/// Sigma = (Phi + N*Sigma_hat + (N*m/(N+m)) (mu_hat-mu0)(mu_hat-mu0)^T) / (N + n0)
///
/// and the mean follows `rule`. The result is repaired to positive definite.
pub fn niw_map(
    empirical_mean: &DVector<f64>,
    empirical_cov: &DMatrix<f64>,
    n: usize,
    prior: &NiwPrior,
    rule: NiwMeanRule,
) -> Result<Gaussian> {
    let nf = n as f64;
    let delta = empirical_mean - &prior.mu0;
    let spread = &delta * delta.transpose() * (nf * prior.m / (nf + prior.m));
    let cov = (&prior.phi + empirical_cov * nf + spread) / (nf + prior.n0);
    let mean = match rule {
        NiwMeanRule::PseudoCounts => {
            (&prior.mu0 * prior.m + empirical_mean * prior.n0) / (prior.m + prior.n0)
        }
        NiwMeanRule::SampleCount => {
            (&prior.mu0 * prior.m + empirical_mean * nf) / (prior.m + nf)
        }
    };
    Ok(Gaussian::new(mean, clamp_spd(&cov)?))
}

/// Empirical mean and covariance (normalized by N, not N-1) of column vectors.
pub fn empirical_moments(data: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    assert!(!data.is_empty(), "empirical_moments on empty data");
    let d = data[0].len();
    let n = data.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in data {
        mean += x;
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    for x in data {
        let diff = x - &mean;
        cov += &diff * diff.transpose();
    }
    cov /= n;
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian_2d() -> Gaussian {
        Gaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
    }

    #[test]
    fn condition_block_diagonal_gives_marginal() {
        let mut cov = DMatrix::identity(4, 4);
        cov[(2, 2)] = 3.0;
        cov[(3, 3)] = 4.0;
        cov[(2, 3)] = 0.5;
        cov[(3, 2)] = 0.5;
        let mean = DVector::from_row_slice(&[1.0, 2.0, 3.0, 4.0]);
        let joint = Gaussian::new(mean, cov.clone());
        let cond = condition(&joint, 2).unwrap();
        assert_relative_eq!(cond.gain.norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(cond.offset[0], 3.0, epsilon = 1e-12);
        assert_relative_eq!(cond.offset[1], 4.0, epsilon = 1e-12);
        assert_relative_eq!(cond.cov[(0, 0)], 3.0, epsilon = 1e-12);
        assert_relative_eq!(cond.cov[(0, 1)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn condition_2d_schur_complement() {
        let cond = condition(&gaussian_2d(), 1).unwrap();
        assert_relative_eq!(cond.gain[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(cond.offset[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(cond.cov[(0, 0)], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn condition_rejects_bad_split() {
        assert!(condition(&gaussian_2d(), 0).is_err());
        assert!(condition(&gaussian_2d(), 2).is_err());
    }

    #[test]
    fn condition_rejects_unrepairable() {
        let joint = Gaussian::new(
            DVector::zeros(2),
            DMatrix::from_row_slice(2, 2, &[f64::NAN, 0.0, 0.0, 1.0]),
        );
        assert!(matches!(condition(&joint, 1), Err(GpsError::Regularization(_))));
    }

    #[test]
    fn kl_identity_is_zero() {
        let p = gaussian_2d();
        assert!(kl_divergence(&p, &p).unwrap() < KL_EQUAL_TOL);
    }

    #[test]
    fn kl_unit_shift_is_half() {
        let p = Gaussian::new(DVector::from_element(1, 0.0), DMatrix::identity(1, 1));
        let q = Gaussian::new(DVector::from_element(1, 1.0), DMatrix::identity(1, 1));
        assert_relative_eq!(kl_divergence(&p, &q).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kl_dimension_mismatch() {
        let p = gaussian_2d();
        let q = Gaussian::new(DVector::zeros(3), DMatrix::identity(3, 3));
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(GpsError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn niw_map_prior_agreeing_with_data_is_shrunk_scale_only() {
        let mu_hat = DVector::from_row_slice(&[1.0, -2.0]);
        let sigma_hat = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let n = 7;
        let prior = NiwPrior {
            phi: DMatrix::zeros(2, 2),
            mu0: mu_hat.clone(),
            m: 1.0,
            n0: 1.0,
        };
        let out = niw_map(&mu_hat, &sigma_hat, n, &prior, NiwMeanRule::PseudoCounts).unwrap();
        assert_relative_eq!(out.mean, mu_hat, epsilon = 1e-12);
        let expected = &sigma_hat * (n as f64 / (n as f64 + 1.0));
        assert_relative_eq!(out.cov, expected, epsilon = 1e-12);
    }

    #[test]
    fn niw_map_matches_independent_formula_evaluator() {
        // d=2, N=5: every term written out by hand against the closed form.
        let mu_hat = DVector::from_row_slice(&[0.4, -0.2]);
        let sigma_hat = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);
        let prior = NiwPrior {
            phi: DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            mu0: DVector::from_row_slice(&[1.0, 1.0]),
            m: 1.0,
            n0: 1.0,
        };
        let n = 5;
        let out = niw_map(&mu_hat, &sigma_hat, n, &prior, NiwMeanRule::PseudoCounts).unwrap();

        // Independent scalar evaluation.
        let nf = 5.0;
        let scale = nf * 1.0 / (nf + 1.0);
        let d0 = 0.4 - 1.0;
        let d1 = -0.2 - 1.0;
        let expect = |i: usize, j: usize, phi: f64, s: f64, di: f64, dj: f64| {
            assert_relative_eq!(
                out.cov[(i, j)],
                (phi + nf * s + scale * di * dj) / (nf + 1.0),
                epsilon = 1e-12
            );
        };
        expect(0, 0, 0.5, 1.5, d0, d0);
        expect(0, 1, 0.0, 0.2, d0, d1);
        expect(1, 1, 0.5, 0.8, d1, d1);
        assert_relative_eq!(out.mean[0], (1.0 + 0.4) / 2.0, epsilon = 1e-12);
        assert_relative_eq!(out.mean[1], (1.0 - 0.2) / 2.0, epsilon = 1e-12);

        let sc = niw_map(&mu_hat, &sigma_hat, n, &prior, NiwMeanRule::SampleCount).unwrap();
        assert_relative_eq!(sc.mean[0], (1.0 + 5.0 * 0.4) / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn niw_map_degenerate_covariance_is_floored() {
        let mu_hat = DVector::zeros(2);
        let prior = NiwPrior {
            phi: DMatrix::zeros(2, 2),
            mu0: DVector::zeros(2),
            m: 1.0,
            n0: 1.0,
        };
        let out =
            niw_map(&mu_hat, &DMatrix::zeros(2, 2), 3, &prior, NiwMeanRule::PseudoCounts).unwrap();
        assert!(Cholesky::new(out.cov).is_some());
    }

    #[test]
    fn regularize_handles_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let fixed = regularize_spd(&a).unwrap();
        assert!(Cholesky::new(fixed).is_some());
    }

    #[test]
    fn conditional_then_marginalization_recovers_joint_b_moments() {
        // mu_b = gain mu_a + offset; S_bb = gain S_aa gain^T + cond_cov.
        let cov = DMatrix::from_row_slice(
            3,
            3,
            &[2.0, 0.4, 0.2, 0.4, 1.5, -0.3, 0.2, -0.3, 1.1],
        );
        let mean = DVector::from_row_slice(&[1.0, -1.0, 0.5]);
        let joint = Gaussian::new(mean.clone(), cov.clone());
        let cond = condition(&joint, 1).unwrap();
        let mu_a = mean.rows(0, 1).into_owned();
        let recon_mean = cond.mean_at(&mu_a);
        let s_aa = cov.view((0, 0), (1, 1)).into_owned();
        let recon_cov = &cond.gain * s_aa * cond.gain.transpose() + &cond.cov;
        assert_relative_eq!(recon_mean[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(recon_mean[1], 0.5, epsilon = 1e-10);
        assert_relative_eq!(recon_cov[(0, 0)], 1.5, epsilon = 1e-10);
        assert_relative_eq!(recon_cov[(0, 1)], -0.3, epsilon = 1e-10);
        assert_relative_eq!(recon_cov[(1, 1)], 1.1, epsilon = 1e-10);
    }
}
