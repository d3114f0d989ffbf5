//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use adamlab::ema::beta_grid;
use adamlab::equiv::{complete_square, prop1_suite, prop2_condition, SquareCompletion};
use adamlab::quadbench::{
    build_problem, exhaustive_mean_gradient, initial_point, power_of_two_grid, BlockSpec, Layout,
};
use adamlab::signal::{check_properties, decay_blindness, Filter, FilterKind, SignalSpec};
use adamlab::vi::oracle_suite;
use adamlab::{rng, Execution, OptimizerKind};
use adamlab_cli::cmd::quad::QuadOutput;
use adamlab_cli::{cmd_quad, ExperimentConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

const SEED: u64 = 20_240_917;

fn variance_form_equivalence() -> Outcome {
    let betas = [0.8, 0.9, 0.95, 0.975, 0.9875];
    let cases = prop1_suite(&betas, 50, 1000, SEED, 1e-9, 1e-10, Execution::default()).unwrap();
    let dir = cases
        .iter()
        .map(|c| c.report.direction.max_abs_residual)
        .fold(0.0, f64::max);
    let var = cases
        .iter()
        .map(|c| c.report.variance.max_abs_residual)
        .fold(0.0, f64::max);
    outcome(
        cases.len() == 250 && cases.iter().all(|c| c.report.passed()),
        format!("{} sequences, max direction residual {dir:.3e} (<= 1e-9), max relative variance residual {var:.3e} (<= 1e-10)", cases.len()),
    )
}

fn closed_form_optimality() -> Outcome {
    let cases = oracle_suite(100, 10_000, SEED, Execution::default()).unwrap();
    let obj = cases
        .iter()
        .map(|c| c.objective_gap)
        .fold(f64::NEG_INFINITY, f64::max);
    let par = cases.iter().map(|c| c.parameter_gap).fold(0.0, f64::max);
    let margin = cases
        .iter()
        .map(|c| c.candidate_margin)
        .fold(f64::INFINITY, f64::min);
    outcome(
        cases.len() == 100 && obj <= 1e-8 && par <= 1e-4 && margin >= -1e-8,
        format!("objective gap {obj:.3e} (<= 1e-8), parameter gap {par:.3e} (<= 1e-4), min candidate margin {margin:.3e} (>= -1e-8)"),
    )
}

fn equal_beta_characterization() -> Outcome {
    let betas = beta_grid(0.9, &power_of_two_grid(-5, 2)).unwrap();
    let mut ok = true;
    let (mut completed, mut obstructed) = (0, 0);
    let mut min_margin = f64::INFINITY;
    for &b1 in &betas {
        for &b2 in &betas {
            let cond = prop2_condition(b1, b2).unwrap();
            if b1 == b2 {
                ok &= cond == 0.0;
                continue;
            }
            ok &= cond > 0.0;
            match complete_square(b1, b2).unwrap() {
                SquareCompletion::Completed {
                    leftover_coefficient,
                    required,
                    margin,
                    ..
                } => {
                    println!("    beta1={b1:<8} beta2={b2:<8} leftover {leftover_coefficient:.12} required {required:.12} margin {margin:.3e}");
                    ok &= margin > 0.0;
                    min_margin = min_margin.min(margin);
                    completed += 1;
                }
                SquareCompletion::NoRealCompletion { b_squared } => {
                    println!(
                        "    beta1={b1:<8} beta2={b2:<8} no real completion, b^2 = {b_squared:.3e}"
                    );
                    ok &= b_squared < 0.0;
                    obstructed += 1;
                }
            }
        }
    }
    outcome(
        ok,
        format!(
            "{} betas: condition 0 on the diagonal; {completed} unequal pairs with min margin {min_margin:.3e}, {obstructed} with no real completion",
            betas.len()
        ),
    )
}

fn median_of(out: &QuadOutput, layout: Layout, kind: OptimizerKind) -> f64 {
    out.comparisons
        .iter()
        .find(|c| c.layout == layout)
        .and_then(|c| c.by_kind(kind))
        .map(|s| s.median_final)
        .expect("optimizer present")
}

fn quadratic_ordering(out: &QuadOutput) -> Outcome {
    use Layout::*;
    use OptimizerKind::*;
    let (adam, signum, sgd) = (
        median_of(out, Heterogeneous, AdamEqualBeta),
        median_of(out, Heterogeneous, Signum),
        median_of(out, Heterogeneous, Sgd),
    );
    let het_ratio = sgd / adam;
    let hom_ratio = median_of(out, Homogeneous, Sgd) / median_of(out, Homogeneous, AdamEqualBeta);
    outcome(
        adam < signum && signum < sgd && hom_ratio < het_ratio,
        format!("het medians adam {adam:.3e} < signum {signum:.3e} < sgd {sgd:.3e}; sgd/adam ratio hom {hom_ratio:.3e} < het {het_ratio:.3e}"),
    )
}

fn block_variance_spread(out: &QuadOutput) -> Outcome {
    let summary = out
        .comparisons
        .iter()
        .find(|c| c.layout == Layout::Heterogeneous)
        .and_then(|c| c.by_kind(OptimizerKind::AdamEqualBeta))
        .expect("adam present");
    let mut worst = f64::INFINITY;
    for run in &summary.best_runs {
        let means = run.mean_block_deltas();
        let max = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = means.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.min(max / min);
    }
    outcome(
        !summary.best_runs.is_empty() && worst >= 2.0,
        format!(
            "{} seeds at lr {:e}: smallest max/min block ratio {worst:.3e} (>= 2)",
            summary.best_runs.len(),
            summary.best_lr.unwrap_or(f64::NAN)
        ),
    )
}

fn fixed_epsilon_signum(out: &QuadOutput) -> Outcome {
    let ab = out
        .comparisons
        .iter()
        .zip(&out.ablations)
        .find(|(c, _)| c.layout == Layout::Heterogeneous)
        .map(|(_, ab)| ab)
        .expect("heterogeneous ablation");
    let best = ab.best_mollified().expect("variants");
    outcome(
        ab.mollified.len() == 6 && best.median_final >= ab.reference.median_final,
        format!(
            "best fixed-eps {} median {:.3e} >= equal-beta adam {:.3e}",
            best.label, best.median_final, ab.reference.median_final
        ),
    )
}

fn filter_properties() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for kind in FilterKind::ALL {
        let f = Filter::new(kind, 0.95).unwrap();
        let r = check_properties(&f, 100, 256, 1e-12, SEED, Execution::default()).unwrap();
        ok &= r.passed() && r.trials == 100;
        parts.push(format!(
            "{} {}",
            kind.name(),
            if r.passed() { "ok" } else { "FAILED" }
        ));
    }
    let d = decay_blindness(
        &Filter::new(FilterKind::AdamEqualBeta, 0.95).unwrap(),
        &SignalSpec::default(),
        0.05,
    )
    .unwrap();
    ok &= d.passed;
    parts.push(format!(
        "decay gap {:.4e} after {} steps (<= 0.05)",
        d.max_gap, d.burn_in
    ));
    outcome(ok, parts.join(", "))
}

fn gradient_unbiasedness() -> Outcome {
    let mut ok = true;
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for layout in [Layout::Heterogeneous, Layout::Homogeneous] {
        let p = build_problem(&BlockSpec::for_layout(layout), SEED).unwrap();
        let mut r = rng::stream(SEED, "acceptance-w", 0);
        for _ in 0..20 {
            let w = initial_point(&mut r, 9, 1.0);
            let hw = p.full_gradient(&w);
            let avg = exhaustive_mean_gradient(&p, &w, 3).unwrap();
            let scale = hw.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let gap = avg
                .iter()
                .zip(&hw)
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            worst_abs = worst_abs.max(gap);
            worst_rel = worst_rel.max(gap / scale);
            ok &= gap <= 1e-12 * scale.max(1.0);
        }
    }
    outcome(ok, format!("84 batches x 20 points x 2 layouts: max gap {worst_abs:.3e}, relative to max|Hw| {worst_rel:.3e} (<= 1e-12)"))
}

fn determinism(config: &ExperimentConfig, root: &Path) -> Outcome {
    let path = root.join("config.toml");
    fs::write(&path, config.to_toml().unwrap()).unwrap();
    let loaded = ExperimentConfig::load(&path).unwrap();
    let (a, b) = (root.join("a"), root.join("b"));
    cmd_quad(&loaded, &a, Execution::Parallel).unwrap();
    cmd_quad(&loaded, &b, Execution::Sequential).unwrap();
    let mut ok = true;
    let mut sizes = Vec::new();
    for name in ["runs.csv", "summary.csv", "epsilon_ablation.csv"] {
        let (x, y) = (
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
        );
        ok &= !x.is_empty() && x == y;
        sizes.push(format!("{name} {} bytes", x.len()));
    }
    outcome(
        ok,
        format!(
            "parallel vs sequential run from the same file: {}",
            sizes.join(", ")
        ),
    )
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored; `--list`
    // must not run anything.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::default();

    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((id, name, o, t.elapsed().as_secs_f64()));
    };

    timed(
        1,
        "variance-form equivalence",
        &mut variance_form_equivalence,
    );
    timed(
        2,
        "closed-form VI update is optimal",
        &mut closed_form_optimality,
    );
    timed(
        3,
        "equal-beta condition and square completion",
        &mut equal_beta_characterization,
    );
    let t = Instant::now();
    let quad = cmd_quad(&config, &tmp.path().join("quad"), Execution::default()).unwrap();
    let quad_secs = t.elapsed().as_secs_f64();
    timed(4, "quadratic benchmark ordering", &mut || {
        quadratic_ordering(&quad)
    });
    timed(5, "per-block variance spread", &mut || {
        block_variance_spread(&quad)
    });
    timed(6, "fixed-epsilon signum does not beat adam", &mut || {
        fixed_epsilon_signum(&quad)
    });
    timed(
        7,
        "filter properties and decay blindness",
        &mut filter_properties,
    );
    timed(
        8,
        "minibatch gradient unbiasedness",
        &mut gradient_unbiasedness,
    );
    timed(9, "byte-identical quad output", &mut || {
        determinism(&config, tmp.path())
    });

    let mut failed = 0;
    for (id, name, o, secs) in &results {
        let secs = if *id == 4 { secs + quad_secs } else { *secs };
        println!(
            "{} criterion {id}: {name} ({secs:.1}s): {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.passed);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
