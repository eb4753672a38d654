//! `compare`: align runs by cumulative sample count and print a markdown
//! table of cost and final distance per method, optionally writing CSV.

use std::path::Path;

use anyhow::{anyhow, Context};

use gpslab_core::gps::{IterationMetrics, METRICS_SCHEMA_VERSION};

use crate::{CliError, CliResult};

struct Run {
    label: String,
    horizon: Option<usize>,
    metrics: Vec<IterationMetrics>,
}

pub fn run(dirs: &[std::path::PathBuf], out: Option<&Path>) -> CliResult {
    if dirs.is_empty() {
        return Err(CliError::config(anyhow!("no run directories given")));
    }
    let mut runs = Vec::new();
    for dir in dirs {
        runs.push(load_run(dir).map_err(CliError::incompatible)?);
    }
    let horizons: Vec<usize> = runs.iter().filter_map(|r| r.horizon).collect();
    if horizons.windows(2).any(|w| w[0] != w[1]) {
        return Err(CliError::incompatible(anyhow!(
            "runs use different horizons: {horizons:?}"
        )));
    }

    // Budget axis: the union of every run's cumulative sample counts.
    let mut budgets: Vec<usize> =
        runs.iter().flat_map(|r| r.metrics.iter().map(|m| m.total_samples)).collect();
    budgets.sort_unstable();
    budgets.dedup();

    let mut markdown = String::new();
    markdown.push_str("| samples |");
    for r in &runs {
        markdown.push_str(&format!(" {} cost | {} dist |", r.label, r.label));
    }
    markdown.push('\n');
    markdown.push_str("|---|");
    for _ in &runs {
        markdown.push_str("---|---|");
    }
    markdown.push('\n');

    let mut csv = String::from("samples");
    for r in &runs {
        csv.push_str(&format!(",{}_cost,{}_dist", r.label, r.label));
    }
    csv.push('\n');

    for &budget in &budgets {
        markdown.push_str(&format!("| {budget} |"));
        csv.push_str(&budget.to_string());
        for r in &runs {
            // Latest iteration within this sample budget.
            let at = r.metrics.iter().rfind(|m| m.total_samples <= budget);
            match at {
                Some(m) => {
                    markdown.push_str(&format!(
                        " {:.4} | {:.4} |",
                        m.mean_cost, m.mean_final_distance_det
                    ));
                    csv.push_str(&format!(
                        ",{:.17e},{:.17e}",
                        m.mean_cost, m.mean_final_distance_det
                    ));
                }
                None => {
                    markdown.push_str("  |  |");
                    csv.push_str(",,");
                }
            }
        }
        markdown.push('\n');
        csv.push('\n');
    }

    print!("{markdown}");
    if let Some(path) = out {
        std::fs::write(path, csv).map_err(|e| CliError::runtime(e.into()))?;
    }
    Ok(())
}

fn load_run(dir: &Path) -> anyhow::Result<Run> {
    let metrics_path = dir.join("metrics.jsonl");
    let text = std::fs::read_to_string(&metrics_path)
        .with_context(|| format!("cannot read {}", metrics_path.display()))?;
    let mut metrics = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let m = IterationMetrics::from_json_line(line).with_context(|| {
            format!("{}:{}: malformed metrics record", metrics_path.display(), lineno + 1)
        })?;
        if m.schema_version != METRICS_SCHEMA_VERSION {
            return Err(anyhow!(
                "{}: metrics schema version {} (expected {METRICS_SCHEMA_VERSION})",
                metrics_path.display(),
                m.schema_version
            ));
        }
        metrics.push(m);
    }
    if metrics.is_empty() {
        return Err(anyhow!("{}: no metrics records", metrics_path.display()));
    }
    let label = metrics[0].method.clone();
    // Horizon from the saved task definition when present.
    let horizon = std::fs::read_to_string(dir.join("task.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("horizon").and_then(|h| h.as_u64()))
        .map(|h| h as usize);
    Ok(Run { label, horizon, metrics })
}
