use std::path::{Path, PathBuf};

use adamlab::quadbench::{build_problem, run_cell, BlockSpec, RunRecord};
use adamlab::stats::{median, quantile};
use adamlab::{Execution, OptimizerConfig, OptimizerKind};
use serde::Serialize;

use crate::config::{ExperimentConfig, SweepConfig};
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, float, CsvOut};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub config: OptimizerConfig,
    pub lr: f64,
    pub median_final: f64,
    pub q25_final: f64,
    pub q75_final: f64,
    pub diverged: usize,
    /// Runs that returned an error instead of a trace.
    pub failed: usize,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub cells: Vec<SweepCell>,
    pub file: PathBuf,
}

/// Optimizer configurations of the sweep, in output order.
pub fn sweep_configs(sweep: &SweepConfig) -> Result<Vec<OptimizerConfig>> {
    let betas = sweep.betas()?;
    let mut configs = Vec::new();
    for &kind in &sweep.optimizers {
        match kind {
            OptimizerKind::SignSgd => configs.push(OptimizerConfig::sign_sgd()),
            OptimizerKind::Adam => {
                for &b1 in &betas {
                    for &b2 in &betas {
                        if !sweep.equal_betas || b1 == b2 {
                            configs.push(OptimizerConfig::adam(b1, b2));
                        }
                    }
                }
            }
            k => configs.extend(betas.iter().map(|&b| OptimizerConfig::for_kind(k, b))),
        }
    }
    Ok(configs)
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &Path, exec: Execution) -> Result<SweepOutput> {
    let sweep = &config.sweep;
    if sweep.lr_grid.is_empty() {
        return Err(CliError::Usage("sweep learning-rate grid is empty".into()));
    }
    if sweep.seeds.is_empty() || sweep.optimizers.is_empty() || sweep.kappas.is_empty() {
        return Err(CliError::Usage(
            "sweep needs seeds, optimizers and kappas".into(),
        ));
    }
    let spec = sweep.tune_spec(config.seed);
    spec.validate()?;
    let configs = sweep_configs(sweep)?;
    let problem = build_problem(&BlockSpec::for_layout(sweep.layout), sweep.problem_seed)?;

    let seeds = &spec.seeds;
    let jobs: Vec<(usize, usize, u64)> = (0..configs.len())
        .flat_map(|c| {
            (0..spec.lr_grid.len()).flat_map(move |l| seeds.iter().map(move |&s| (c, l, s)))
        })
        .collect();
    let runs: Vec<adamlab::Result<RunRecord>> = exec.map(&jobs, |&(c, l, s)| {
        run_cell(&problem, &configs[c], spec.lr_grid[l], &spec, s)
    });

    let per_cell = spec.seeds.len();
    let cells: Vec<SweepCell> = runs
        .chunks(per_cell)
        .zip(jobs.chunks(per_cell))
        .map(|(runs, jobs)| {
            let (c, l, _) = jobs[0];
            let finals: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.as_ref().ok())
                .map(RunRecord::final_loss)
                .collect();
            let first_error = runs
                .iter()
                .find_map(|r| r.as_ref().err())
                .map(ToString::to_string);
            SweepCell {
                config: configs[c],
                lr: spec.lr_grid[l],
                median_final: median(&finals).unwrap_or(f64::NAN),
                q25_final: quantile(&finals, 0.25).unwrap_or(f64::NAN),
                q75_final: quantile(&finals, 0.75).unwrap_or(f64::NAN),
                diverged: runs
                    .iter()
                    .filter(|r| matches!(r, Ok(r) if r.diverged))
                    .count(),
                failed: runs.len() - finals.len(),
                first_error,
            }
        })
        .collect();

    ensure_dir(out)?;
    let mut csv = CsvOut::create(
        out.join("sweep.csv"),
        &[
            "optimizer",
            "layout",
            "beta1",
            "beta2",
            "lr",
            "median_final",
            "q25",
            "q75",
            "diverged",
            "failed",
            "error",
        ],
    )?;
    let layout = sweep.layout.to_string();
    for cell in &cells {
        csv.row([
            cell.config.kind.name().to_string(),
            layout.clone(),
            float(cell.config.beta1),
            float(cell.config.beta2),
            float(cell.lr),
            float(cell.median_final),
            float(cell.q25_final),
            float(cell.q75_final),
            cell.diverged.to_string(),
            cell.failed.to_string(),
            cell.first_error.clone().unwrap_or_default(),
        ])?;
    }
    Ok(SweepOutput {
        cells,
        file: csv.finish()?,
    })
}
