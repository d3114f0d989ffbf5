use adamlab::ema::beta_grid;
use adamlab::equiv::{
    complete_square, prop1_suite, prop2_condition, trust_region_agreement, ResidualReport,
    SquareCompletion,
};
use adamlab::quadbench::{
    build_problem, exhaustive_mean_gradient, initial_point, BlockSpec, Layout,
};
use adamlab::signal::{check_properties, decay_blindness, FilterKind};
use adamlab::vi::oracle_suite;
use adamlab::{rng, Execution};
use clap::ValueEnum;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Prop1,
    Prop2,
    Vi,
    Signal,
    Trust,
    Grad,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Prop1,
        Suite::Prop2,
        Suite::Vi,
        Suite::Signal,
        Suite::Trust,
        Suite::Grad,
    ];

    pub fn expand(self) -> Vec<Suite> {
        match self {
            Suite::All => Self::EACH.to_vec(),
            s => vec![s],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// The measured quantity compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            note: None,
        }
    }

    fn residual(name: impl Into<String>, r: &ResidualReport) -> Self {
        Self::at_most(name, r.max_abs_residual, r.tolerance)
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn failures(&self) -> usize {
        self.suites
            .iter()
            .flat_map(|s| &s.checks)
            .filter(|c| !c.passed)
            .count()
    }
}

pub fn cmd_verify(
    config: &ExperimentConfig,
    suite: Suite,
    exec: Execution,
) -> Result<VerifyReport> {
    let suites = suite
        .expand()
        .into_iter()
        .map(|s| {
            let checks = match s {
                Suite::Prop1 => prop1_checks(config, exec)?,
                Suite::Prop2 => prop2_checks(config)?,
                Suite::Vi => vi_checks(config, exec)?,
                Suite::Signal => signal_checks(config, exec)?,
                Suite::Trust => trust_checks(config)?,
                Suite::Grad => grad_checks(config)?,
                Suite::All => unreachable!("expanded above"),
            };
            Ok(SuiteReport {
                suite: s,
                passed: checks.iter().all(|c| c.passed),
                checks,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerifyReport {
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}

fn prop1_checks(config: &ExperimentConfig, exec: Execution) -> Result<Vec<Check>> {
    let v = &config.verify;
    let cases = prop1_suite(
        &v.betas,
        v.prop1_sequences,
        v.prop1_length,
        config.seed,
        v.direction_tol,
        v.variance_tol,
        exec,
    )?;
    let mut checks = Vec::new();
    for &beta in &v.betas {
        let of_beta: Vec<_> = cases.iter().filter(|c| c.beta == beta).collect();
        let dir: Vec<_> = of_beta.iter().map(|c| c.report.direction).collect();
        let var: Vec<_> = of_beta.iter().map(|c| c.report.variance).collect();
        if let (Some(d), Some(r)) = (ResidualReport::merge(&dir), ResidualReport::merge(&var)) {
            checks.push(Check::residual(format!("direction beta={beta}"), &d));
            checks.push(Check::residual(
                format!("variance beta={beta} (relative)"),
                &r,
            ));
        }
    }
    Ok(checks)
}

fn prop2_checks(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let betas = beta_grid(config.verify.beta_base, &config.verify.kappas)?;
    let mut checks = Vec::new();
    for &b1 in &betas {
        for &b2 in &betas {
            let name = format!("beta1={b1} beta2={b2}");
            let cond = prop2_condition(b1, b2)?;
            if b1 == b2 {
                checks.push(Check::at_most(format!("{name} condition"), cond, 0.0));
                continue;
            }
            let check = match complete_square(b1, b2)? {
                SquareCompletion::Completed {
                    leftover_coefficient,
                    required,
                    margin,
                    ..
                } => Check {
                    name: format!("{name} leftover margin"),
                    passed: cond > 0.0 && margin > 0.0,
                    value: margin,
                    tolerance: 0.0,
                    note: Some(format!(
                        "leftover coefficient {leftover_coefficient} vs required {required}"
                    )),
                },
                SquareCompletion::NoRealCompletion { b_squared } => Check {
                    name: format!("{name} no real completion"),
                    passed: cond > 0.0 && b_squared < 0.0,
                    value: b_squared,
                    tolerance: 0.0,
                    note: Some("(1-beta2) < (1-beta1)^2".into()),
                },
            };
            checks.push(check);
        }
    }
    Ok(checks)
}

fn vi_checks(config: &ExperimentConfig, exec: Execution) -> Result<Vec<Check>> {
    let v = &config.verify;
    let cases = oracle_suite(v.vi_instances, v.vi_candidates, config.seed, exec)?;
    let worst = |f: fn(&adamlab::vi::OracleCase) -> f64| {
        cases.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let objective = worst(|c| c.objective_gap);
    let params = worst(|c| c.parameter_gap);
    let beaten_by = worst(|c| -c.candidate_margin);
    Ok(vec![
        Check::at_most(
            "objective(closed form) - objective(oracle)",
            objective,
            v.objective_tol,
        ),
        Check::at_most("parameter gap to oracle", params, v.parameter_tol),
        Check::at_most(
            "best candidate improvement over closed form",
            beaten_by,
            v.objective_tol,
        )
        .note(format!("{} candidates per instance", v.vi_candidates)),
    ])
}

fn signal_checks(config: &ExperimentConfig, exec: Execution) -> Result<Vec<Check>> {
    let v = &config.verify;
    let mut checks = Vec::new();
    for kind in FilterKind::ALL {
        let filter = config.signal.filter(kind)?;
        let r = check_properties(
            &filter,
            v.signal_trials,
            v.signal_length,
            v.signal_tol,
            config.seed,
            exec,
        )?;
        checks.push(Check::at_most(
            format!("{} causality", r.label),
            r.causality_gap,
            r.tolerance,
        ));
        checks.push(Check::at_most(
            format!("{} positive scaling", r.label),
            r.scaling_gap,
            r.tolerance,
        ));
        checks.push(Check::at_most(
            format!("{} oddness", r.label),
            r.oddness_gap,
            r.tolerance,
        ));
        checks.push(
            Check::at_most(
                format!("{} sup norm", r.label),
                r.max_abs_output,
                1.0 + r.tolerance,
            )
            .note("bound 1 + tolerance"),
        );
    }
    let filter = config.signal.filter(FilterKind::AdamEqualBeta)?;
    let spec = adamlab::signal::SignalSpec::default();
    let d = decay_blindness(&filter, &spec, v.decay_tol)?;
    checks.push(
        Check::at_most(
            format!("{} decay blindness", d.label),
            d.max_gap,
            d.tolerance,
        )
        .note(format!("burn-in {} steps", d.burn_in)),
    );
    Ok(checks)
}

fn trust_checks(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let v = &config.verify;
    let mut checks = Vec::new();
    for &beta in &v.betas {
        let reports = (0..v.trust_sequences)
            .map(|i| {
                let mut r = rng::stream(config.seed, "trust-signal", i);
                let signal: Vec<f64> = (0..v.prop1_length)
                    .map(|_| r.sample(StandardNormal))
                    .collect();
                trust_region_agreement(&signal, beta, v.trust_tol)
            })
            .collect::<adamlab::Result<Vec<_>>>()?;
        if let Some(worst) = ResidualReport::merge(&reports) {
            checks.push(Check::residual(
                format!("direction vs trust-region step beta={beta}"),
                &worst,
            ));
        }
    }
    Ok(checks)
}

fn grad_checks(config: &ExperimentConfig) -> Result<Vec<Check>> {
    let v = &config.verify;
    let mut checks = Vec::new();
    for layout in [Layout::Heterogeneous, Layout::Homogeneous] {
        let problem = build_problem(&BlockSpec::for_layout(layout), config.quad.problem_seed)?;
        let mut r = rng::stream(config.seed, "grad-points", 0);
        let mut worst = 0.0f64;
        for _ in 0..v.grad_points {
            let w = initial_point(&mut r, problem.dim(), 3.0);
            let hw = problem.full_gradient(&w);
            let avg = exhaustive_mean_gradient(&problem, &w, v.grad_batch_size)?;
            let scale = hw.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let gap = avg
                .iter()
                .zip(&hw)
                .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            worst = worst.max(gap / scale);
        }
        checks.push(
            Check::at_most(
                format!("{layout} exhaustive batch mean vs Hw"),
                worst,
                v.grad_tol,
            )
            .note("relative to max |Hw|"),
        );
    }
    Ok(checks)
}
