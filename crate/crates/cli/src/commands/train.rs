//! `train`: run one experiment and write its artifact directory.
//!
//! Artifacts: `resolved_config.json`, `metrics.jsonl`, `curve.csv`
//! (iteration, total_samples, mean_cost, target_distance), controller dumps
//! (`controller_cond<i>.csv`), and for the main method a policy checkpoint.

use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context};

use gpslab_core::baselines::run_baseline;
use gpslab_core::gps::{run_gps, IterationMetrics};
use gpslab_core::lqr::LinearGaussianController;
use gpslab_core::policy::checkpoint;

use crate::config::{ExperimentConfig, Method};
use crate::{CliError, CliResult};

pub fn run(config_path: &Path) -> CliResult {
    let config = ExperimentConfig::load(config_path).map_err(CliError::config)?;
    let task = config.validate().map_err(|errors| {
        CliError::config(anyhow!("invalid configuration:\n  - {}", errors.join("\n  - ")))
    })?;

    let out_dir = Path::new(&config.output_dir);
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))
        .map_err(CliError::config)?;

    // Resolved config first, so a crashed run is still identifiable.
    let resolved = serde_json::to_string_pretty(&config).expect("config serializes");
    std::fs::write(out_dir.join("resolved_config.json"), resolved)
        .map_err(|e| CliError::runtime(e.into()))?;
    let task_json = serde_json::to_string_pretty(&task).expect("task serializes");
    std::fs::write(out_dir.join("task.json"), task_json)
        .map_err(|e| CliError::runtime(e.into()))?;

    let metrics = match config.method {
        Method::Gps => {
            let run = run_gps(&task, &config.gps_config())
                .map_err(|e| CliError::runtime(e.into()))?;
            checkpoint::save(&run.policy, &out_dir.join("policy.ckpt"))
                .map_err(|e| CliError::runtime(e.into()))?;
            for (i, controller) in run.controllers.iter().enumerate() {
                write_controller_csv(&out_dir.join(format!("controller_cond{i}.csv")), controller)
                    .map_err(CliError::runtime)?;
            }
            run.metrics
        }
        Method::Cem | Method::Rwr => {
            let envs = task
                .conditions(gpslab_core::envs::Split::Train, config.conditions, config.seed)
                .map_err(|e| CliError::runtime(e.into()))?;
            run_baseline(&envs, &config.baseline_config(), task.init_action_noise)
                .map_err(|e| CliError::runtime(e.into()))?
        }
    };

    write_metrics(&out_dir.join("metrics.jsonl"), &metrics).map_err(CliError::runtime)?;
    write_curve(&out_dir.join("curve.csv"), &metrics).map_err(CliError::runtime)?;

    if let Some(last) = metrics.last() {
        println!(
            "{}: {} iterations, {} samples, final mean cost {:.4}, final distance {:.4} -> {}",
            config.method_name(),
            metrics.len(),
            last.total_samples,
            last.mean_cost,
            last.mean_final_distance_det,
            out_dir.display()
        );
    }
    Ok(())
}

fn write_metrics(path: &Path, metrics: &[IterationMetrics]) -> anyhow::Result<()> {
    let mut file = std::fs::File::create(path)?;
    for m in metrics {
        writeln!(file, "{}", m.to_json_line())?;
    }
    Ok(())
}

fn write_curve(path: &Path, metrics: &[IterationMetrics]) -> anyhow::Result<()> {
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "iteration,total_samples,mean_cost,target_distance")?;
    for m in metrics {
        writeln!(
            file,
            "{},{},{:.17e},{:.17e}",
            m.iteration, m.total_samples, m.mean_cost, m.mean_final_distance_det
        )?;
    }
    Ok(())
}

/// One row per timestep: t, then K (row-major), k, C (row-major).
fn write_controller_csv(path: &Path, c: &LinearGaussianController) -> anyhow::Result<()> {
    let mut file = std::fs::File::create(path)?;
    let du = c.du();
    let dx = c.dx();
    let mut header = vec!["t".to_string()];
    for r in 0..du {
        for col in 0..dx {
            header.push(format!("K_{r}_{col}"));
        }
    }
    for r in 0..du {
        header.push(format!("k_{r}"));
    }
    for r in 0..du {
        for col in 0..du {
            header.push(format!("C_{r}_{col}"));
        }
    }
    writeln!(file, "{}", header.join(","))?;
    for t in 0..c.horizon() {
        let mut row = vec![t.to_string()];
        for r in 0..du {
            for col in 0..dx {
                row.push(format!("{:.17e}", c.gains[t][(r, col)]));
            }
        }
        for r in 0..du {
            row.push(format!("{:.17e}", c.offsets[t][r]));
        }
        for r in 0..du {
            for col in 0..du {
                row.push(format!("{:.17e}", c.covs[t][(r, col)]));
            }
        }
        writeln!(file, "{}", row.join(","))?;
    }
    Ok(())
}
