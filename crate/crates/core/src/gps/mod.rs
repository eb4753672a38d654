//! The outer training loop: sample rollouts, fit the transition-model prior
//! and per-condition dynamics, alternate the constrained controller update
//! with supervised policy training, then adjust the Lagrange multipliers
//! and per-step penalty weights.

pub mod metrics;
pub mod rollout;

pub use metrics::{IterationMetrics, METRICS_SCHEMA_VERSION};
pub use rollout::{controller_rollout, mean_rollout, mix_seed, policy_rollout, sample_rollouts};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynfit::{
    fit_dynamics, linearize_policy, LinearGaussianDynamics, LinearizedPolicy, RegressionPrior,
};
use crate::envs::{EnvCost, Environment, TaskKind, TaskSpec};
use crate::error::GpsError;
use crate::gauss::{spd_cholesky, Gaussian, NiwMeanRule};
use crate::gmm::{choose_k, fit_gmm};
use crate::lqr::{backward_pass, forward_pass, quadratize, LinearGaussianController, QuadraticCost};
use crate::policy::{
    pretrain::{pretrain_pose, toy_vision_spec, PoseTrainOptions},
    supervised_loss_and_grad, update_sigma as sigma_update, GaussianPolicy, Network, NetworkSpec,
    ReplayBuffer, ReplayEntry, SgdMomentum, TrainingItem,
};
use crate::sample::TrajectorySample;
use crate::trajopt::{kl_step, traj_kl, KlStepOptions, StepStatus};
use crate::Result;

/// All knobs of a training run. `Default` matches the built-in tasks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpsConfig {
    pub conditions: usize,
    pub samples_per_condition: usize,
    pub iterations: usize,
    /// Iterations run first with a small state-input network standing in for
    /// the final policy (vision tasks only).
    pub pretrain_iterations: usize,
    pub inner_passes: usize,
    /// Supervised minibatch steps per inner pass.
    pub policy_steps: usize,
    pub policy_batch: usize,
    pub policy_learning_rate: f64,
    pub policy_momentum: f64,
    /// KL step size for the constrained controller update.
    pub epsilon: f64,
    /// Multiplier step size.
    pub alpha: f64,
    pub nu_init: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    /// Prior-fitting history: current plus this many previous iterations.
    pub history_window: usize,
    /// Replayed-observation window, in iterations.
    pub replay_window: usize,
    pub shared_dynamics: bool,
    pub policy_hidden: Vec<usize>,
    pub seed: u64,
    pub gmm_max_iters: usize,
    pub kl_options: KlStepOptions,
    pub mean_rule: NiwMeanRule,
    /// Vision tasks: pretrain the front-end on pose regression.
    pub pose_pretrain: bool,
    pub pose_dataset_size: usize,
    pub pose_steps: usize,
    /// Vision tasks: supervised steps with the front-end frozen before
    /// end-to-end training.
    pub frontend_freeze_steps: usize,
    /// Optimize the controllers alone: the policy, multiplier updates, and
    /// penalty schedule are disabled and the constrained update sees only
    /// the task cost. This is the protocol used when comparing trajectory
    /// optimizers, and the mode controller pretraining runs in.
    pub trajectory_only: bool,
    /// Variance floor added to controller covariances after each update.
    /// Keeps exploration (and with it the policy's supervision coverage)
    /// from collapsing once the controllers converge.
    pub min_exploration_variance: f64,
}

impl Default for GpsConfig {
    fn default() -> Self {
        Self {
            conditions: 4,
            samples_per_condition: 5,
            iterations: 15,
            pretrain_iterations: 0,
            inner_passes: 2,
            policy_steps: 50,
            policy_batch: 32,
            policy_learning_rate: 1e-3,
            policy_momentum: 0.9,
            epsilon: 1.0,
            alpha: 0.1,
            nu_init: 0.01,
            nu_min: 1e-4,
            nu_max: 1e4,
            history_window: 3,
            replay_window: 3,
            shared_dynamics: false,
            policy_hidden: vec![40],
            seed: 0,
            gmm_max_iters: 50,
            kl_options: KlStepOptions::default(),
            mean_rule: NiwMeanRule::PseudoCounts,
            pose_pretrain: true,
            pose_dataset_size: 300,
            pose_steps: 400,
            frontend_freeze_steps: 200,
            trajectory_only: false,
            min_exploration_variance: 0.0,
        }
    }
}

impl GpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conditions == 0 {
            return Err(GpsError::InvalidConfig("need at least one condition".into()));
        }
        if self.samples_per_condition < 2 {
            return Err(GpsError::InvalidConfig(
                "need at least 2 samples per condition to linearize the policy".into(),
            ));
        }
        if self.iterations == 0 {
            return Err(GpsError::InvalidConfig("iteration budget must be positive".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(GpsError::InvalidConfig("epsilon must be positive".into()));
        }
        if self.alpha < 0.0 {
            return Err(GpsError::InvalidConfig("alpha must be non-negative".into()));
        }
        if self.nu_init <= 0.0 || self.nu_min <= 0.0 || self.nu_max < self.nu_min {
            return Err(GpsError::InvalidConfig("invalid nu bounds".into()));
        }
        if self.inner_passes == 0 {
            return Err(GpsError::InvalidConfig("need at least one inner pass".into()));
        }
        Ok(())
    }
}

/// Which input the stand-in/final policy reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PolicyInput {
    State,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Main,
}

impl Phase {
    fn name(&self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Main => "main",
        }
    }
}

/// Mutable training state threaded through the outer iterations.
pub struct GpsState {
    pub iteration: usize,
    pub total_samples: usize,
    /// Cumulative supervised steps taken this phase (drives the staged
    /// front-end freeze for vision policies).
    pub policy_steps_taken: usize,
    pub controllers: Vec<LinearGaussianController>,
    pub policy: GaussianPolicy,
    pub lambda: Vec<DVector<f64>>,
    pub nu: Vec<f64>,
    pub archive: Vec<TrajectorySample>,
    pub replay: ReplayBuffer,
    input: PolicyInput,
}

impl GpsState {
    /// Public constructor for driving [`outer_iteration`] directly: PD
    /// initial controllers, observation-input policy, multipliers at their
    /// initial values.
    pub fn initialize(
        envs: &[Box<dyn Environment>],
        policy: GaussianPolicy,
        init_action_noise: f64,
        config: &GpsConfig,
    ) -> Result<Self> {
        let controllers: Vec<LinearGaussianController> = envs
            .iter()
            .map(|e| init_pd_controller(e.as_ref(), init_action_noise))
            .collect::<Result<_>>()?;
        let has_frontend = policy.net.spec.vision.is_some();
        let mut state = Self::new(
            controllers,
            policy,
            envs[0].horizon(),
            envs[0].action_dim(),
            config,
            PolicyInput::Observation,
        );
        if !has_frontend {
            state.policy_steps_taken = config.frontend_freeze_steps;
        }
        Ok(state)
    }

    fn new(
        controllers: Vec<LinearGaussianController>,
        policy: GaussianPolicy,
        horizon: usize,
        du: usize,
        config: &GpsConfig,
        input: PolicyInput,
    ) -> Self {
        Self {
            iteration: 0,
            total_samples: 0,
            policy_steps_taken: 0,
            controllers,
            policy,
            lambda: vec![DVector::zeros(du); horizon],
            nu: vec![config.nu_init; horizon],
            archive: Vec::new(),
            replay: ReplayBuffer::new(config.replay_window),
            input,
        }
    }

    fn policy_input<'a>(&self, obs: &'a DVector<f64>, state: &'a DVector<f64>) -> &'a DVector<f64> {
        match self.input {
            PolicyInput::State => state,
            PolicyInput::Observation => obs,
        }
    }
}

/// Proportional-derivative initial controller: time-varying LQR gains from a
/// per-coordinate unit-mass double-integrator model, holding the initial
/// position with the configured exploration noise.
pub fn init_pd_controller(
    env: &dyn Environment,
    action_noise: f64,
) -> Result<LinearGaussianController> {
    let dx = env.state_dim();
    let du = env.action_dim();
    let dpos = env.position_dims();
    if dpos * 2 != dx || du != dpos {
        return Err(GpsError::InvalidConfig(format!(
            "PD initialization expects state [q; qdot] with one action per position \
             (dx={dx}, du={du}, positions={dpos})"
        )));
    }
    let dt = env.dt();
    let horizon = env.horizon();
    let mut a = DMatrix::identity(dx, dx);
    let mut b = DMatrix::zeros(dx, du);
    for i in 0..dpos {
        a[(i, dpos + i)] = dt;
        b[(i, i)] = 0.5 * dt * dt;
        b[(dpos + i, i)] = dt;
    }
    let dynamics = LinearGaussianDynamics::time_invariant(
        a,
        b,
        DVector::zeros(dx),
        DMatrix::zeros(dx, dx),
        horizon - 1,
    );
    let x1 = env.initial_state();
    let mut q = DMatrix::zeros(dx, dx);
    for i in 0..dpos {
        q[(i, i)] = 1.0;
        q[(dpos + i, dpos + i)] = 0.1;
    }
    let mut hold_target = DVector::zeros(dx);
    hold_target.rows_mut(0, dpos).copy_from(&x1.rows(0, dpos));
    let cost = QuadraticCost { q, r: DMatrix::identity(du, du) * 1e-2, target: hold_target };
    let states = vec![DVector::zeros(dx); horizon];
    let actions = vec![DVector::zeros(du); horizon];
    let expansion = quadratize(&cost, &states, &actions)?;
    let (mut controller, _) = backward_pass(&expansion, &dynamics)?;
    for c in &mut controller.covs {
        *c = DMatrix::identity(du, du) * action_noise;
    }
    Ok(controller)
}

/// Elementwise multiplier update
/// `lambda_t += alpha * nu_t * (E_pi[u_t] - E_p[u_t])`.
pub fn update_lambda(
    lambda: &mut [DVector<f64>],
    nu: &[f64],
    alpha: f64,
    policy_expected: &[DVector<f64>],
    controller_expected: &[DVector<f64>],
) {
    for t in 0..lambda.len() {
        lambda[t] += (&policy_expected[t] - &controller_expected[t]) * (alpha * nu[t]);
    }
}

/// Penalty-weight schedule: double where the per-step divergence exceeds the
/// mean over steps, halve where it sits at least two standard deviations
/// below the mean, clamped to the configured bounds.
pub fn schedule_nu(nu: &mut [f64], kl_per_step: &[f64], bounds: (f64, f64)) {
    let n = kl_per_step.len() as f64;
    let mean = kl_per_step.iter().sum::<f64>() / n;
    let var = kl_per_step.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for (w, &kl) in nu.iter_mut().zip(kl_per_step) {
        if kl > mean {
            *w = (*w * 2.0).clamp(bounds.0, bounds.1);
        } else if kl < mean && mean - kl >= 2.0 * std {
            *w = (*w / 2.0).clamp(bounds.0, bounds.1);
        }
    }
}

fn initial_gaussian(env: &dyn Environment) -> Gaussian {
    Gaussian::isotropic(env.initial_state(), 1e-8)
}

fn linearized_as_controller(lin: &LinearizedPolicy) -> LinearGaussianController {
    LinearGaussianController {
        gains: lin.gains.clone(),
        offsets: lin.offsets.clone(),
        covs: lin.covs.clone(),
    }
}

/// One outer iteration; returns the metrics record for this iteration.
pub fn outer_iteration(
    state: &mut GpsState,
    envs: &[Box<dyn Environment>],
    config: &GpsConfig,
    phase: Phase,
) -> Result<IterationMetrics> {
    let horizon = envs[0].horizon();
    let n_cond = envs.len();

    // Draw this iteration's rollouts and extend the archive window.
    let new_samples = sample_rollouts(
        envs,
        &state.controllers,
        config.samples_per_condition,
        state.iteration,
        config.seed,
    )?;
    state.total_samples += new_samples.len();
    let mean_cost = new_samples.iter().map(|s| s.total_cost()).sum::<f64>()
        / new_samples.len() as f64;
    let final_distances: Vec<f64> = new_samples
        .iter()
        .map(|s| envs[s.condition].target_distance(s.states.last().unwrap()))
        .collect();
    let mean_final_distance =
        final_distances.iter().sum::<f64>() / final_distances.len() as f64;
    let min_final_distance = final_distances.iter().cloned().fold(f64::INFINITY, f64::min);
    state.archive.extend(new_samples.iter().cloned());
    state
        .archive
        .retain(|s| state.iteration.saturating_sub(s.iteration) <= config.history_window);

    // Transition-model prior over the archive window, pooled across
    // conditions.
    let tuples: Vec<DVector<f64>> =
        state.archive.iter().flat_map(|s| s.transition_tuples()).collect();
    let k = choose_k(tuples.len());
    let gmm = fit_gmm(
        &tuples,
        k,
        config.gmm_max_iters,
        mix_seed(&[config.seed, state.iteration as u64, 0xfe]),
    )?;
    let prior = RegressionPrior::Gmm { gmm: &gmm, pseudo_counts: (1.0, 1.0) };

    // Per-condition (or shared) dynamics from the current iteration's
    // samples only.
    let current: Vec<TrajectorySample> = state
        .archive
        .iter()
        .filter(|s| s.iteration == state.iteration)
        .cloned()
        .collect();
    let dynamics: Vec<LinearGaussianDynamics> = if config.shared_dynamics {
        let shared = fit_dynamics(&current, prior, config.mean_rule)?;
        vec![shared; n_cond]
    } else {
        (0..n_cond)
            .map(|i| {
                let mine: Vec<TrajectorySample> = current
                    .iter()
                    .filter(|s| s.condition == i)
                    .cloned()
                    .collect();
                fit_dynamics(&mine, prior, config.mean_rule)
            })
            .collect::<Result<_>>()?
    };

    // Record replay entries under the state marginals of the controllers
    // that generated them.
    let inits: Vec<Gaussian> = envs.iter().map(|e| initial_gaussian(e.as_ref())).collect();
    for i in 0..n_cond {
        let marginals = forward_pass(&state.controllers[i], &dynamics[i], &inits[i])?;
        let dx = envs[i].state_dim();
        for s in current.iter().filter(|s| s.condition == i) {
            for t in 0..horizon {
                let m = &marginals[t];
                state.replay.push(ReplayEntry {
                    condition: i,
                    t,
                    iteration: state.iteration,
                    obs: s.observations[t].clone(),
                    state: s.states[t].clone(),
                    origin: Gaussian::new(
                        m.mean.rows(0, dx).into_owned(),
                        m.cov.view((0, 0), (dx, dx)).into_owned(),
                    ),
                });
            }
        }
    }
    state.replay.prune(state.iteration);

    // Quadratic cost models around each condition's mean trajectory under
    // the freshly fitted dynamics.
    let mut expansions = Vec::with_capacity(n_cond);
    for i in 0..n_cond {
        let marginals = forward_pass(&state.controllers[i], &dynamics[i], &inits[i])?;
        let dx = envs[i].state_dim();
        let du = envs[i].action_dim();
        let nominal_states: Vec<DVector<f64>> =
            marginals.iter().map(|m| m.mean.rows(0, dx).into_owned()).collect();
        let nominal_actions: Vec<DVector<f64>> =
            marginals.iter().map(|m| m.mean.rows(dx, du).into_owned()).collect();
        expansions.push(quadratize(&EnvCost(envs[i].as_ref()), &nominal_states, &nominal_actions)?);
    }

    let mut statuses = vec![StepStatus::ConstraintInactive; n_cond];
    let mut etas = vec![0.0; n_cond];
    let mut last_policy_loss = 0.0;
    #[allow(unused_assignments)]
    let mut linearizations: Vec<LinearizedPolicy> = Vec::new();
    let mut rng =
        ChaCha8Rng::seed_from_u64(mix_seed(&[config.seed, state.iteration as u64, 0xab]));

    let passes = if config.trajectory_only { 1 } else { config.inner_passes };
    for _pass in 0..passes {
        // Linearize the policy mean around each condition's samples. In
        // trajectory-only mode the previous controller stands in, which
        // makes the agreement term inert.
        linearizations = relinearize(state, &current, config, n_cond, horizon)?;

        // Constrained controller update per condition.
        let results: Vec<Result<crate::trajopt::StepResult>> = (0..n_cond)
            .into_par_iter()
            .map(|i| {
                kl_step(
                    &expansions[i],
                    &state.lambda,
                    &state.nu,
                    &linearizations[i],
                    &state.controllers[i],
                    &dynamics[i],
                    &inits[i],
                    config.epsilon,
                    &config.kl_options,
                )
            })
            .collect();
        for (i, r) in results.into_iter().enumerate() {
            let r = r?;
            state.controllers[i] = r.controller;
            statuses[i] = r.status;
            etas[i] = r.eta;
            if config.min_exploration_variance > 0.0 {
                let du = state.controllers[i].du();
                for c in &mut state.controllers[i].covs {
                    *c += DMatrix::identity(du, du) * config.min_exploration_variance;
                }
            }
        }

        if config.trajectory_only {
            continue;
        }

        // Supervised policy training on the replay window.
        last_policy_loss = train_policy_pass(state, &dynamics, &inits, config, &mut rng)?;

        // Closed-form covariance from the updated controllers.
        let covs: Vec<&DMatrix<f64>> = state
            .controllers
            .iter()
            .flat_map(|c| c.covs.iter())
            .collect();
        state.policy.sigma = sigma_update(&covs)?;
    }

    // Multiplier update from the latest sampled states, then the penalty
    // schedule from the per-step controller/policy divergence, both against
    // the freshly trained policy.
    let mut kl_totals = Vec::with_capacity(n_cond);
    if config.trajectory_only {
        kl_totals.resize(n_cond, 0.0);
    } else {
        linearizations = relinearize(state, &current, config, n_cond, horizon)?;
        let mut policy_expected = vec![DVector::zeros(envs[0].action_dim()); horizon];
        let mut controller_expected = vec![DVector::zeros(envs[0].action_dim()); horizon];
        let mut counts = vec![0usize; horizon];
        for s in &current {
            for t in 0..horizon {
                let pi_u = state
                    .policy
                    .mean(state.policy_input(&s.observations[t], &s.states[t]))?;
                let p_u = state.controllers[s.condition].mean_action(t, &s.states[t]);
                policy_expected[t] += pi_u;
                controller_expected[t] += p_u;
                counts[t] += 1;
            }
        }
        for t in 0..horizon {
            policy_expected[t] /= counts[t] as f64;
            controller_expected[t] /= counts[t] as f64;
        }
        update_lambda(
            &mut state.lambda,
            &state.nu,
            config.alpha,
            &policy_expected,
            &controller_expected,
        );

        let mut kl_per_step = vec![0.0; horizon];
        for i in 0..n_cond {
            let lin_ctrl = linearized_as_controller(&linearizations[i]);
            let (per_step, total) =
                traj_kl(&state.controllers[i], &lin_ctrl, &dynamics[i], &inits[i])?;
            for t in 0..horizon {
                kl_per_step[t] += per_step[t] / n_cond as f64;
            }
            kl_totals.push(total);
        }
        schedule_nu(&mut state.nu, &kl_per_step, (config.nu_min, config.nu_max));
    }

    // Noiseless evaluation of the updated controllers.
    let mut det_dist = 0.0;
    for (i, env) in envs.iter().enumerate() {
        let rollout = rollout::mean_rollout(env.as_ref(), &state.controllers[i])?;
        det_dist += env.target_distance(rollout.states.last().unwrap()) / n_cond as f64;
    }

    let stalled = statuses.iter().all(|s| *s == StepStatus::StepRejected);
    let lambda_norm = state.lambda.iter().map(|l| l.norm_squared()).sum::<f64>().sqrt();
    let metrics = IterationMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        method: "gps".into(),
        phase: phase.name().into(),
        iteration: state.iteration,
        total_samples: state.total_samples,
        mean_cost,
        mean_final_distance,
        min_final_distance,
        mean_final_distance_det: det_dist,
        kl_policy_controller: kl_totals,
        lambda_norm,
        nu_min: state.nu.iter().cloned().fold(f64::INFINITY, f64::min),
        nu_max: state.nu.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        eta: etas,
        step_status: statuses
            .iter()
            .map(|s| {
                match s {
                    StepStatus::ConstraintInactive => "inactive",
                    StepStatus::ConstrainedOptimum => "constrained",
                    StepStatus::StepRejected => "rejected",
                }
                .into()
            })
            .collect(),
        stalled,
        policy_loss: last_policy_loss,
    };
    state.iteration += 1;
    Ok(metrics)
}

/// Linearize the policy mean around each condition's current samples (the
/// previous controllers stand in when running trajectory-only).
fn relinearize(
    state: &GpsState,
    current: &[TrajectorySample],
    config: &GpsConfig,
    n_cond: usize,
    horizon: usize,
) -> Result<Vec<LinearizedPolicy>> {
    let mut linearizations = Vec::with_capacity(n_cond);
    for i in 0..n_cond {
        if config.trajectory_only {
            linearizations.push(LinearizedPolicy {
                gains: state.controllers[i].gains.clone(),
                offsets: state.controllers[i].offsets.clone(),
                covs: state.controllers[i].covs.clone(),
            });
            continue;
        }
        let mine: Vec<TrajectorySample> =
            current.iter().filter(|s| s.condition == i).cloned().collect();
        let means: Vec<Vec<DVector<f64>>> = mine
            .iter()
            .map(|s| {
                (0..horizon)
                    .map(|t| {
                        state
                            .policy
                            .mean(state.policy_input(&s.observations[t], &s.states[t]))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        linearizations.push(linearize_policy(&mine, &means, &state.policy.sigma)?);
    }
    Ok(linearizations)
}

/// One supervised training pass over the replay buffer; returns the last
/// minibatch loss.
fn train_policy_pass(
    state: &mut GpsState,
    dynamics: &[LinearGaussianDynamics],
    inits: &[Gaussian],
    config: &GpsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if state.replay.is_empty() {
        return Ok(0.0);
    }
    let n_cond = state.controllers.len();
    let horizon = state.controllers[0].horizon();

    // Current state marginals and controller precisions, shared by every
    // minibatch in this pass.
    let mut marginals = Vec::with_capacity(n_cond);
    for i in 0..n_cond {
        let m = forward_pass(&state.controllers[i], &dynamics[i], &inits[i])?;
        let dx = dynamics[i].dx;
        marginals.push(
            m.into_iter()
                .map(|j| {
                    Gaussian::new(
                        j.mean.rows(0, dx).into_owned(),
                        j.cov.view((0, 0), (dx, dx)).into_owned(),
                    )
                })
                .collect::<Vec<_>>(),
        );
    }
    let mut precisions = Vec::with_capacity(n_cond);
    for c in &state.controllers {
        let per_t: Vec<DMatrix<f64>> = c
            .covs
            .iter()
            .map(|cov| spd_cholesky(cov).map(|ch| ch.inverse()))
            .collect::<Result<_>>()?;
        precisions.push(per_t);
    }

    // Raw importance ratios per entry (clipped); normalized per batch below.
    let entries = state.replay.entries().to_vec();
    let mut raw_weights = Vec::with_capacity(entries.len());
    for e in &entries {
        let current = &marginals[e.condition][e.t];
        let ratio =
            (current.log_density(&e.state)? - e.origin.log_density(&e.state)?).exp();
        raw_weights.push(ratio.clamp(1e-2, 1e2));
    }

    let mut opt = SgdMomentum::new(
        config.policy_learning_rate,
        config.policy_momentum,
        state.policy.net.param_count(),
    );
    let mut last_loss = 0.0;
    let _ = horizon;
    for _ in 0..config.policy_steps {
        let batch: Vec<usize> =
            (0..config.policy_batch).map(|_| rng.gen_range(0..entries.len())).collect();
        let batch_mean_weight =
            batch.iter().map(|&i| raw_weights[i]).sum::<f64>() / batch.len() as f64;
        let items: Vec<TrainingItem> = batch
            .iter()
            .map(|&idx| {
                let e = &entries[idx];
                let target_mean = state.controllers[e.condition].mean_action(e.t, &e.state);
                TrainingItem {
                    obs: state.policy_input(&e.obs, &e.state).clone(),
                    target_mean,
                    precision: precisions[e.condition][e.t].clone(),
                    lambda: state.lambda[e.t].clone(),
                    weight: raw_weights[idx] / batch_mean_weight,
                }
            })
            .collect();
        let (loss, mut grad) = supervised_loss_and_grad(&state.policy, &items)?;
        // Staged schedule for pretrained vision layers: keep the front-end
        // frozen for the first steps of the phase, then train end-to-end.
        if state.policy_steps_taken < config.frontend_freeze_steps {
            let frozen = state.policy.net.frontend_param_count();
            for i in 0..frozen {
                grad[i] = 0.0;
            }
        }
        if grad.iter().all(|g| g.is_finite()) {
            opt.step(&mut state.policy.net, &grad);
        }
        state.policy_steps_taken += 1;
        last_loss = loss;
    }
    Ok(last_loss)
}

/// Result of a full training run.
pub struct GpsRun {
    pub policy: GaussianPolicy,
    pub controllers: Vec<LinearGaussianController>,
    pub metrics: Vec<IterationMetrics>,
}

/// Full training: controller initialization, optional front-end and
/// trajectory pretraining, then outer iterations to the budget.
pub fn run_gps(task: &TaskSpec, config: &GpsConfig) -> Result<GpsRun> {
    config.validate()?;
    task.validate()?;
    let envs = task.conditions(crate::envs::Split::Train, config.conditions, config.seed)?;
    let horizon = envs[0].horizon();
    let du = envs[0].action_dim();
    let dx = envs[0].state_dim();
    let obs_dim = envs[0].obs_dim();
    let is_vision = task.kind == TaskKind::PointmassPegVision;

    let controllers: Vec<LinearGaussianController> = envs
        .iter()
        .map(|e| init_pd_controller(e.as_ref(), task.init_action_noise))
        .collect::<Result<_>>()?;

    let mut metrics = Vec::new();

    // Trajectory pretraining with a small state-input stand-in network.
    let mut pretrain_state = if config.pretrain_iterations > 0 {
        let stand_in = GaussianPolicy::new(Network::init(
            NetworkSpec::state_policy(dx, du, config.policy_hidden.clone()),
            mix_seed(&[config.seed, 0x57a7e]),
        ));
        let mut s = GpsState::new(
            controllers.clone(),
            stand_in,
            horizon,
            du,
            config,
            PolicyInput::State,
        );
        s.policy_steps_taken = config.frontend_freeze_steps;
        for _ in 0..config.pretrain_iterations {
            let m = outer_iteration(&mut s, &envs, config, Phase::Pretrain)?;
            metrics.push(m);
        }
        Some(s)
    } else {
        None
    };

    // Final policy: vision front-end (optionally pose-pretrained) or a
    // plain state-observation network.
    let policy = if is_vision {
        let vision = toy_vision_spec();
        let spec = NetworkSpec {
            obs_dim,
            action_dim: du,
            hidden: config.policy_hidden.clone(),
            nonlin: crate::policy::Nonlinearity::Relu,
            vision: Some(vision.clone()),
        };
        let mut net = Network::init(spec, mix_seed(&[config.seed, 0xb1]));
        if config.pose_pretrain {
            let dataset = crate::envs::render::pose_dataset(
                config.pose_dataset_size,
                mix_seed(&[config.seed, 0x905e]),
            );
            let pose = pretrain_pose(
                &dataset,
                vision,
                &PoseTrainOptions {
                    steps: config.pose_steps,
                    seed: mix_seed(&[config.seed, 0x905f]),
                    ..Default::default()
                },
            )?;
            net.transfer_frontend(&pose.net)?;
        }
        GaussianPolicy::new(net)
    } else {
        match &pretrain_state {
            // Same architecture: carry the pretrained stand-in forward.
            Some(s) if obs_dim == dx => s.policy.clone(),
            _ => GaussianPolicy::new(Network::init(
                NetworkSpec::state_policy(obs_dim, du, config.policy_hidden.clone()),
                mix_seed(&[config.seed, 0x90]),
            )),
        }
    };

    // Controllers carry over from pretraining; multipliers restart because
    // the policy they couple to is new.
    let start_controllers = pretrain_state
        .as_mut()
        .map(|s| std::mem::take(&mut s.controllers))
        .unwrap_or(controllers);
    let mut state =
        GpsState::new(start_controllers, policy, horizon, du, config, PolicyInput::Observation);
    if !is_vision {
        // No pretrained front-end to protect.
        state.policy_steps_taken = config.frontend_freeze_steps;
    }
    if let Some(s) = pretrain_state {
        state.total_samples = s.total_samples;
        state.iteration = s.iteration;
    }

    for _ in 0..config.iterations {
        let m = outer_iteration(&mut state, &envs, config, Phase::Main)?;
        metrics.push(m);
    }
    Ok(GpsRun { policy: state.policy, controllers: state.controllers, metrics })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_update_matches_printed_arithmetic() {
        let mut lambda = vec![DVector::zeros(2); 1];
        let nu = vec![0.01];
        let gap = vec![DVector::from_row_slice(&[1.0, 0.0])];
        let zero = vec![DVector::zeros(2)];
        update_lambda(&mut lambda, &nu, 0.1, &gap, &zero);
        approx::assert_relative_eq!(lambda[0][0], 0.001, epsilon = 1e-15);
        approx::assert_relative_eq!(lambda[0][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn lambda_unchanged_for_equal_expectations() {
        let mut lambda = vec![DVector::from_row_slice(&[0.3]); 2];
        let nu = vec![0.01; 2];
        let e = vec![DVector::from_row_slice(&[0.7]); 2];
        update_lambda(&mut lambda, &nu, 0.1, &e, &e.clone());
        assert_eq!(lambda[0][0], 0.3);
    }

    #[test]
    fn nu_schedule_equal_kls_unchanged() {
        let mut nu = vec![0.01; 4];
        schedule_nu(&mut nu, &[0.5; 4], (1e-4, 1e4));
        assert_eq!(nu, vec![0.01; 4]);
    }

    #[test]
    fn nu_schedule_spike_doubles_only_that_step() {
        let mut nu = vec![0.01; 4];
        schedule_nu(&mut nu, &[10.0, 1.0, 1.0, 1.0], (1e-4, 1e4));
        assert_eq!(nu[0], 0.02);
        assert_eq!(nu[1], 0.01);
        assert_eq!(nu[2], 0.01);
        assert_eq!(nu[3], 0.01);
    }

    #[test]
    fn nu_schedule_halves_deep_below_mean() {
        // One step far below the mean of an otherwise tight cluster.
        let mut nu = vec![0.01; 5];
        let kls = [1.0, 1.0, 1.0, 1.0, 0.0];
        schedule_nu(&mut nu, &kls, (1e-4, 1e4));
        // mean 0.8, std 0.4: the zero entry sits exactly 2 std below.
        assert_eq!(nu[4], 0.005);
        // The 1.0 entries are above the mean and double.
        assert_eq!(nu[0], 0.02);
    }

    #[test]
    fn nu_respects_clamp() {
        let mut nu = vec![9e3, 2e-4];
        schedule_nu(&mut nu, &[10.0, 0.0], (1e-4, 1e4));
        assert!(nu[0] <= 1e4);
        assert!(nu[1] >= 1e-4);
    }

    #[test]
    fn one_iteration_improves_on_pd_initialization() {
        let task = TaskSpec::builtin(TaskKind::DoubleIntegrator);
        let config = GpsConfig {
            conditions: 1,
            samples_per_condition: 5,
            iterations: 1,
            epsilon: 100.0,
            nu_init: 1e-4,
            trajectory_only: true,
            seed: 2,
            ..Default::default()
        };
        let envs = task.conditions(crate::envs::Split::Train, 1, config.seed).unwrap();
        let policy = GaussianPolicy::new(Network::init(
            NetworkSpec::state_policy(2, 1, vec![8]),
            0,
        ));
        let mut state =
            GpsState::initialize(&envs, policy, task.init_action_noise, &config).unwrap();
        let before = mean_rollout(envs[0].as_ref(), &state.controllers[0])
            .unwrap()
            .total_cost();
        outer_iteration(&mut state, &envs, &config, Phase::Main).unwrap();
        let after = mean_rollout(envs[0].as_ref(), &state.controllers[0])
            .unwrap()
            .total_cost();
        assert!(after < before, "cost did not improve: {before} -> {after}");
    }

    #[test]
    fn no_op_configuration_leaves_controllers_unchanged() {
        let task = TaskSpec::builtin(TaskKind::DoubleIntegrator);
        let config = GpsConfig {
            conditions: 1,
            samples_per_condition: 5,
            iterations: 1,
            epsilon: 1e-9,
            alpha: 0.0,
            policy_steps: 0,
            seed: 3,
            ..Default::default()
        };
        let envs = task.conditions(crate::envs::Split::Train, 1, config.seed).unwrap();
        let policy = GaussianPolicy::new(Network::init(
            NetworkSpec::state_policy(2, 1, vec![8]),
            0,
        ));
        let mut state =
            GpsState::initialize(&envs, policy, task.init_action_noise, &config).unwrap();
        let before = state.controllers[0].clone();
        outer_iteration(&mut state, &envs, &config, Phase::Main).unwrap();
        for t in 0..before.horizon() {
            assert!(
                (&state.controllers[0].gains[t] - &before.gains[t]).amax() < 1e-6,
                "gains moved at t={t}"
            );
            assert!(
                (&state.controllers[0].offsets[t] - &before.offsets[t]).amax() < 1e-6
            );
        }
    }

    #[test]
    fn pd_controller_holds_initial_state() {
        let spec = TaskSpec::builtin(TaskKind::PointmassPeg);
        let envs = spec.conditions(crate::envs::Split::Train, 1, 0).unwrap();
        let controller = init_pd_controller(envs[0].as_ref(), 1e-12).unwrap();
        let rollout = mean_rollout(envs[0].as_ref(), &controller).unwrap();
        let x0 = envs[0].initial_state();
        for x in &rollout.states {
            assert!(
                (x.rows(0, 2) - x0.rows(0, 2)).norm() < 0.05,
                "drifted to {x:?} from {x0:?}"
            );
        }
    }
}
