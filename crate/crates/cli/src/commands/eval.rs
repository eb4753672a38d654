//! `eval`: roll a saved policy on a task's train or test conditions and
//! report per-condition success and final distance.
//!
//! Trial 0 executes the policy mean; additional trials sample actions from
//! the policy Gaussian with seeds derived from `--seed`. Everything is
//! deterministic given the seed.

use std::path::Path;

use anyhow::anyhow;

use gpslab_core::envs::{Split, TaskSpec};
use gpslab_core::gps::{mix_seed, policy_rollout};
use gpslab_core::policy::checkpoint;

use crate::{CliError, CliResult};

pub fn run(
    checkpoint_path: &Path,
    task_name: &str,
    split: &str,
    trials: usize,
    seed: u64,
    conditions: usize,
    threshold: f64,
) -> CliResult {
    let policy = checkpoint::load(checkpoint_path).map_err(|e| CliError::config(e.into()))?;
    let task = TaskSpec::by_name(task_name)
        .ok_or_else(|| CliError::config(anyhow!("unknown task '{task_name}'")))?;
    let split = match split {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(CliError::config(anyhow!("unknown split '{other}'"))),
    };
    let envs = task
        .conditions(split, conditions, seed)
        .map_err(|e| CliError::runtime(e.into()))?;
    if envs[0].obs_dim() != policy.net.spec.obs_dim
        || envs[0].action_dim() != policy.net.spec.action_dim
    {
        return Err(CliError::incompatible(anyhow!(
            "checkpoint expects obs {} / action {}, task provides obs {} / action {}",
            policy.net.spec.obs_dim,
            policy.net.spec.action_dim,
            envs[0].obs_dim(),
            envs[0].action_dim()
        )));
    }

    println!("condition,offset_success_rate,mean_final_distance,successes,trials");
    let mut overall_success = 0usize;
    let mut overall_trials = 0usize;
    for (i, env) in envs.iter().enumerate() {
        let mut successes = 0usize;
        let mut total_distance = 0.0;
        for trial in 0..trials {
            let noisy = trial > 0;
            let rollout_seed = mix_seed(&[seed, i as u64, trial as u64]);
            let rollout = policy_rollout(env.as_ref(), &policy, noisy, rollout_seed)
                .map_err(|e| CliError::runtime(e.into()))?;
            let distance = env.target_distance(rollout.states.last().unwrap());
            total_distance += distance;
            if distance < threshold {
                successes += 1;
            }
        }
        let rate = if trials == 0 { 0.0 } else { successes as f64 / trials as f64 };
        let mean_distance = if trials == 0 { f64::NAN } else { total_distance / trials as f64 };
        println!("{i},{rate:.3},{mean_distance:.5},{successes},{trials}");
        overall_success += successes;
        overall_trials += trials;
    }
    if overall_trials > 0 {
        println!(
            "overall,{:.3},,,{overall_trials}",
            overall_success as f64 / overall_trials as f64
        );
    }
    Ok(())
}
