use std::path::{Path, PathBuf};

use adamlab::quadbench::{
    build_problem, signum_epsilon_ablation, tune_and_compare, BlockSpec, Comparison,
    EpsilonAblation, OptimizerSummary,
};
use adamlab::Execution;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, float, opt_float, CsvOut};

#[derive(Debug, Clone)]
pub struct QuadOutput {
    pub comparisons: Vec<Comparison>,
    pub ablations: Vec<EpsilonAblation>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_quad(config: &ExperimentConfig, out: &Path, exec: Execution) -> Result<QuadOutput> {
    let q = &config.quad;
    if q.layouts.is_empty() || q.optimizers.is_empty() {
        return Err(CliError::Usage(
            "quad needs at least one layout and one optimizer".into(),
        ));
    }
    let spec = q.tune_spec(config.seed);
    spec.validate()?;

    let mut comparisons = Vec::new();
    let mut ablations = Vec::new();
    for &layout in &q.layouts {
        let problem = build_problem(&BlockSpec::for_layout(layout), q.problem_seed)?;
        comparisons.push(tune_and_compare(&problem, &q.optimizers, &spec, exec)?);
        if !q.ablation_epsilons.is_empty() {
            ablations.push(signum_epsilon_ablation(
                &problem,
                &q.ablation_epsilons,
                q.ablation_beta(),
                &spec,
                exec,
            )?);
        }
    }

    ensure_dir(out)?;
    let mut files = vec![
        write_runs(out, &comparisons)?,
        write_summary(out, &comparisons)?,
    ];
    if !ablations.is_empty() {
        files.push(write_ablation(out, &comparisons, &ablations)?);
    }
    Ok(QuadOutput {
        comparisons,
        ablations,
        files,
    })
}

fn write_runs(out: &Path, comparisons: &[Comparison]) -> Result<PathBuf> {
    let mut csv = CsvOut::create(
        out.join("runs.csv"),
        &[
            "config_id",
            "seed",
            "step",
            "loss",
            "delta_b1",
            "delta_b2",
            "delta_b3",
        ],
    )?;
    for cmp in comparisons {
        for summary in &cmp.summaries {
            for run in &summary.best_runs {
                let seed = run.seed.to_string();
                for (step, &loss) in run.losses.iter().enumerate() {
                    let deltas = step
                        .checked_sub(1)
                        .and_then(|k| run.delta_block_means.get(k));
                    let delta = |b: usize| {
                        deltas
                            .and_then(|d| d.get(b))
                            .map(|&x| float(x))
                            .unwrap_or_default()
                    };
                    csv.row([
                        run.config_id.clone(),
                        seed.clone(),
                        step.to_string(),
                        float(loss),
                        delta(0),
                        delta(1),
                        delta(2),
                    ])?;
                }
            }
        }
    }
    csv.finish()
}

fn summary_row(layout: &str, s: &OptimizerSummary) -> [String; 6] {
    [
        s.label.clone(),
        layout.to_string(),
        opt_float(s.best_lr),
        float(s.median_final),
        float(s.q25_final),
        float(s.q75_final),
    ]
}

fn write_summary(out: &Path, comparisons: &[Comparison]) -> Result<PathBuf> {
    let mut csv = CsvOut::create(
        out.join("summary.csv"),
        &[
            "optimizer",
            "layout",
            "best_lr",
            "median_final",
            "q25",
            "q75",
        ],
    )?;
    for cmp in comparisons {
        for s in &cmp.summaries {
            csv.row(summary_row(&cmp.layout.to_string(), s))?;
        }
    }
    csv.finish()
}

fn write_ablation(
    out: &Path,
    comparisons: &[Comparison],
    ablations: &[EpsilonAblation],
) -> Result<PathBuf> {
    let mut csv = CsvOut::create(
        out.join("epsilon_ablation.csv"),
        &[
            "optimizer",
            "layout",
            "best_lr",
            "median_final",
            "q25",
            "q75",
        ],
    )?;
    for (cmp, ab) in comparisons.iter().zip(ablations) {
        let layout = cmp.layout.to_string();
        for s in ab.mollified.iter().chain(std::iter::once(&ab.reference)) {
            csv.row(summary_row(&layout, s))?;
        }
    }
    csv.finish()
}
