//! Trajectory-centric policy search for small continuous-control tasks.
//!
//! The library learns time-varying linear-Gaussian controllers under unknown
//! dynamics and distills them into a nonlinear Gaussian neural-network policy
//! through an alternating constrained optimization. It ships with simulated
//! environments, cross-entropy and reward-weighted-regression baselines, and
//! a seeded, reproducible experiment layer.
//!
//! Module map:
//! - [`gauss`]: multivariate Gaussian conditioning, KL divergence, and the
//!   normal-inverse-Wishart MAP estimate.
//! - [`gmm`]: mixture-of-Gaussians transition prior fitted by EM.
//! - [`dynfit`]: time-varying linear-Gaussian dynamics and policy
//!   linearization from rollout samples.
//! - [`lqr`]: quadratic cost expansion, the maximum-entropy LQR backward
//!   pass, and exact Gaussian marginal propagation.
//! - [`trajopt`]: the KL-step-constrained controller update solved by dual
//!   search over the step multiplier.
//! - [`policy`]: conditional Gaussian policy networks (MLP plus an optional
//!   convolutional front-end with a spatial-softmax feature-point layer).
//! - [`gps`]: the outer alternating loop tying everything together.
//! - [`envs`]: built-in simulated tasks with analytic cost derivatives.
//! - [`baselines`]: CEM and RWR over flattened controller parameters.

// Per-timestep quantities live in parallel arrays indexed by t; iterator
// rewrites of those loops obscure the recurrences.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod dynfit;
pub mod envs;
pub mod error;
pub mod gauss;
pub mod gmm;
pub mod gps;
pub mod lqr;
pub mod policy;
pub mod sample;
pub mod trajopt;

pub use error::GpsError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, GpsError>;
