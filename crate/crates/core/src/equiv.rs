//! Numeric checkers for the algebraic identities behind equal-beta Adam.
//!
//! * the variance form `m / sqrt(v) == m / sqrt(m^2 + beta * EMA[(m_prev - g)^2])`;
//! * the equal-beta condition `(beta1 - beta2)^2 == 0` and the completing-the-square
//!   obstruction for unequal betas;
//! * the mollified-sign and trust-region readings of the direction.
//!
//! The scalar recursions here are written out independently of [`crate::optim`]
//! so the two implementations can check each other.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ema::{check_beta, InitMode};
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::optim::{direction, sign, OptimizerConfig, OptimizerState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub max_abs_residual: f64,
    pub argmax_index: usize,
    pub passed: bool,
    pub tolerance: f64,
}

impl ResidualReport {
    pub fn from_residuals(residuals: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let (mut max, mut arg) = (0.0f64, 0usize);
        for (i, r) in residuals.into_iter().enumerate() {
            // NaN residuals must fail
            if r.is_nan() || r.abs() > max {
                max = if r.is_nan() { f64::INFINITY } else { r.abs() };
                arg = i;
            }
        }
        Self {
            max_abs_residual: max,
            argmax_index: arg,
            passed: max <= tolerance,
            tolerance,
        }
    }

    /// Worst of several reports, keeping the tolerance of the first.
    pub fn merge(reports: &[ResidualReport]) -> Option<Self> {
        let first = reports.first()?;
        let worst = reports
            .iter()
            .max_by(|a, b| a.max_abs_residual.total_cmp(&b.max_abs_residual))?;
        Some(Self {
            passed: reports.iter().all(|r| r.passed),
            tolerance: first.tolerance,
            ..*worst
        })
    }
}

/// Outcome of running both scalar forms over one signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    /// `max |m/sqrt(v) - m/sqrt(m^2 + delta)|`.
    pub direction: ResidualReport,
    /// `max |(v - m^2) - delta| / v` over steps with `v > 0`.
    pub variance: ResidualReport,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.direction.passed && self.variance.passed
    }
}

/// Both forms under zero init, no epsilon, no bias correction. Variance
/// residuals are checked at `1e-10` relative.
pub fn check_prop1(signal: &[f64], beta: f64, tol: f64) -> Result<Prop1Report> {
    check_prop1_with(signal, beta, InitMode::ZeroInit, tol, 1e-10)
}

pub fn check_prop1_with(
    signal: &[f64],
    beta: f64,
    init_mode: InitMode,
    tol: f64,
    variance_tol: f64,
) -> Result<Prop1Report> {
    check_beta(beta)?;
    ensure(tol > 0.0 && variance_tol > 0.0, || {
        "tolerances must be positive".into()
    })?;
    if let Some(index) = signal.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { index });
    }

    let mut m = 0.0f64;
    let mut v = 0.0f64;
    // EMA of (m_prev - g)^2; starts at zero in both init modes because the
    // seeded first sample carries no deviation.
    let mut dev = 0.0f64;
    let mut dir_res = Vec::with_capacity(signal.len());
    let mut var_res = Vec::with_capacity(signal.len());

    for (k, &g) in signal.iter().enumerate() {
        if k == 0 && init_mode == InitMode::FirstSampleInit {
            m = g;
            v = g * g;
        } else {
            let m_prev = m;
            m = beta * m + (1.0 - beta) * g;
            v = beta * v + (1.0 - beta) * g * g;
            dev = beta * dev + (1.0 - beta) * (m_prev - g) * (m_prev - g);
        }
        let delta = beta * dev;
        let d_standard = if v == 0.0 { 0.0 } else { m / v.sqrt() };
        let var_denom = m * m + delta;
        let d_variance = if var_denom == 0.0 {
            0.0
        } else {
            m / var_denom.sqrt()
        };
        dir_res.push(d_standard - d_variance);
        var_res.push(if v == 0.0 {
            0.0
        } else {
            ((v - m * m) - delta) / v
        });
    }

    Ok(Prop1Report {
        direction: ResidualReport::from_residuals(dir_res, tol),
        variance: ResidualReport::from_residuals(var_res, variance_tol),
    })
}

/// One cell of a variance-form sweep: `beta` and the signal index it was run on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prop1Case {
    pub beta: f64,
    pub sequence: u64,
    pub report: Prop1Report,
}

/// Runs [`check_prop1`] over `sequences` standard-normal signals per beta.
pub fn prop1_suite(
    betas: &[f64],
    sequences: u64,
    length: usize,
    seed: u64,
    tol: f64,
    variance_tol: f64,
    exec: Execution,
) -> Result<Vec<Prop1Case>> {
    let cells: Vec<(f64, u64)> = betas
        .iter()
        .flat_map(|&b| (0..sequences).map(move |s| (b, s)))
        .collect();
    exec.map(&cells, |&(beta, sequence)| {
        let mut r = rng::stream(seed, "prop1-signal", sequence);
        let signal: Vec<f64> = (0..length).map(|_| r.sample(StandardNormal)).collect();
        check_prop1_with(&signal, beta, InitMode::ZeroInit, tol, variance_tol).map(|report| {
            Prop1Case {
                beta,
                sequence,
                report,
            }
        })
    })
    .into_iter()
    .collect()
}

/// `(beta1 - beta2)^2`; zero exactly when the variance form exists.
pub fn prop2_condition(beta1: f64, beta2: f64) -> Result<f64> {
    for b in [beta1, beta2] {
        ensure(b > 0.0 && b < 1.0, || {
            format!("betas must lie in (0, 1), got {b}")
        })?;
    }
    Ok((beta1 - beta2) * (beta1 - beta2))
}

/// Result of trying to complete the square in
/// `v' - m'^2 = beta2 v - beta1^2 m^2 + [(1-beta2) - (1-beta1)^2] g^2 - 2 beta1 (1-beta1) m g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SquareCompletion {
    /// `(a m - b g)^2` absorbs the cross and `g^2` terms; the variance form
    /// needs `leftover_coefficient == beta2`.
    Completed {
        a: f64,
        b: f64,
        leftover_coefficient: f64,
        required: f64,
        /// `|leftover_coefficient - required|`.
        margin: f64,
    },
    /// `b^2 = (1-beta2) - (1-beta1)^2 <= 0`: no real square exists.
    NoRealCompletion { b_squared: f64 },
}

impl SquareCompletion {
    /// Whether the variance form is obstructed.
    pub fn obstructed(&self) -> bool {
        match *self {
            SquareCompletion::Completed { margin, .. } => margin > 0.0,
            SquareCompletion::NoRealCompletion { .. } => true,
        }
    }
}

pub fn complete_square(beta1: f64, beta2: f64) -> Result<SquareCompletion> {
    prop2_condition(beta1, beta2)?;
    let b_squared = (1.0 - beta2) - (1.0 - beta1) * (1.0 - beta1);
    if b_squared <= 0.0 {
        return Ok(SquareCompletion::NoRealCompletion { b_squared });
    }
    let b = b_squared.sqrt();
    let a = beta1 * (1.0 - beta1) / b;
    let leftover_coefficient = beta1 * beta1 * (1.0 - beta2) / b_squared;
    Ok(SquareCompletion::Completed {
        a,
        b,
        leftover_coefficient,
        required: beta2,
        margin: (leftover_coefficient - beta2).abs(),
    })
}

/// `m / sqrt(m^2 + variance)`, i.e. `sign(m) / sqrt(1 + variance / m^2)`; zero at `m == 0`.
pub fn mollified_direction(m: f64, variance: f64) -> Result<f64> {
    check_variance(variance)?;
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok(sign(m) * trust_radius_unchecked(m, variance))
}

/// Radius `1 / sqrt(1 + variance / m^2)` of the adaptive trust region; zero at `m == 0`.
pub fn trust_radius(m: f64, variance: f64) -> Result<f64> {
    check_variance(variance)?;
    if m == 0.0 {
        return Ok(0.0);
    }
    Ok(trust_radius_unchecked(m, variance))
}

fn trust_radius_unchecked(m: f64, variance: f64) -> f64 {
    // |m| / sqrt(m^2 + var) avoids overflow in var / m^2 for tiny m
    let am = m.abs();
    let scaled = variance / (am * am);
    if scaled.is_finite() {
        1.0 / (1.0 + scaled).sqrt()
    } else {
        am / (am * am + variance).sqrt()
    }
}

/// `argmin_{|theta| <= radius} -m * theta`.
pub fn steepest_step(m: f64, radius: f64) -> f64 {
    sign(m) * radius
}

fn check_variance(variance: f64) -> Result<()> {
    if variance >= 0.0 && variance.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "variance must be finite and >= 0, got {variance}"
        )))
    }
}

/// Streams `signal` through raw equal-beta Adam and compares each direction
/// with the steepest step `sign(m) * radius(m, delta)` built from the
/// optimizer's own `m` and `delta` buffers.
pub fn trust_region_agreement(signal: &[f64], beta: f64, tol: f64) -> Result<ResidualReport> {
    let config = OptimizerConfig::adam_equal_beta(beta).raw();
    let mut state = OptimizerState::new(&config, 1)?;
    let mut residuals = Vec::with_capacity(signal.len());
    for &g in signal {
        let d = direction(&config, &mut state, &[g])?.direction[0];
        let m = state.m().value()[0];
        let step = steepest_step(m, trust_radius(m, state.delta()[0])?);
        residuals.push(d - step);
    }
    Ok(ResidualReport::from_residuals(residuals, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn optimizer_matches_trust_region_step() {
        let mut r = rng::stream(9, "t", 0);
        let signal: Vec<f64> = (0..500)
            .map(|_| Rng::sample(&mut r, StandardNormal))
            .collect();
        for beta in [0.0, 0.9, 0.99] {
            let rep = trust_region_agreement(&signal, beta, 1e-12).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn constant_signal_first_sample() {
        for beta in [0.0, 0.5, 0.95] {
            for c in [2.0, -0.3] {
                let r = check_prop1_with(&[c; 100], beta, InitMode::FirstSampleInit, 1e-15, 1e-15)
                    .unwrap();
                assert_eq!(r.direction.max_abs_residual, 0.0);
                assert!(r.passed());
            }
        }
    }

    #[test]
    fn hand_recursion_two_steps() {
        // m1 = 0.5, v1 = 0.5, dev1 = 0.5 * 1 = 0.5
        // m2 = 0.25 - 0.5 = -0.25, v2 = 0.25 + 0.5 = 0.75
        // delta2 = 0.5 * (0.5 * 0.5 + 0.5 * (0.5 + 1)^2) = 0.6875 = 0.75 - 0.0625
        let r = check_prop1(&[1.0, -1.0], 0.5, 1e-15).unwrap();
        assert_eq!(r.variance.max_abs_residual, 0.0);
        assert_eq!(r.direction.max_abs_residual, 0.0);
    }

    #[test]
    fn long_normal_signal() {
        let cases = prop1_suite(&[0.95], 1, 1000, 42, 1e-9, 1e-10, Execution::Sequential).unwrap();
        assert!(cases[0].report.passed(), "{:?}", cases[0].report);
    }

    #[test]
    fn zero_prefix_uses_zero_convention() {
        let r = check_prop1(&[0.0, 0.0, 1.0], 0.9, 1e-12).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn non_finite_signal_is_rejected() {
        assert!(matches!(
            check_prop1(&[1.0, f64::INFINITY], 0.9, 1e-9),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn prop2_values() {
        assert_eq!(prop2_condition(0.95, 0.95).unwrap(), 0.0);
        assert!((prop2_condition(0.9, 0.95).unwrap() - 0.0025).abs() < 1e-15);
        assert!((prop2_condition(0.9, 0.999).unwrap() - 0.009801).abs() < 1e-15);
        assert!(prop2_condition(0.0, 0.5).is_err());
    }

    #[test]
    fn completing_square_equal_betas_has_no_leftover() {
        for beta in [0.8, 0.9, 0.95, 0.975] {
            match complete_square(beta, beta).unwrap() {
                SquareCompletion::Completed { margin, .. } => assert!(margin < 1e-14),
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn completing_square_unequal_betas() {
        // b^2 = 0.1 - 0.0025 = 0.0975, coefficient = 0.9025 * 0.1 / 0.0975 vs 0.9
        match complete_square(0.95, 0.9).unwrap() {
            SquareCompletion::Completed {
                a,
                b,
                leftover_coefficient,
                margin,
                ..
            } => {
                assert!((b * b - 0.0975).abs() < 1e-15);
                assert!((a * b - 0.0475).abs() < 1e-15);
                assert!((leftover_coefficient - 0.925_641_025_641_025_6).abs() < 1e-14);
                assert!((margin - 0.025_641_025_641_025_6).abs() < 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
        // the usual (0.9, 0.999) pair admits no real square at all
        match complete_square(0.9, 0.999).unwrap() {
            SquareCompletion::NoRealCompletion { b_squared } => {
                assert!((b_squared + 0.009).abs() < 1e-15)
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(complete_square(0.6, 0.9).unwrap().obstructed());
    }

    #[test]
    fn mollifier_and_radius_examples() {
        assert_eq!(mollified_direction(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(mollified_direction(1.0, 3.0).unwrap(), 0.5);
        assert_eq!(mollified_direction(-2.0, 0.0).unwrap(), -1.0);
        assert_eq!(mollified_direction(0.0, 5.0).unwrap(), 0.0);
        assert!(mollified_direction(1.0, -1.0).is_err());
        assert_eq!(trust_radius(1.0, 0.0).unwrap(), 1.0);
        assert_eq!(trust_radius(1.0, 3.0).unwrap(), 0.5);
        assert!((trust_radius(0.1, 0.99).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(trust_radius(0.0, 1.0).unwrap(), 0.0);
        assert!(trust_radius(1e-200, 1.0).unwrap() > 0.0);
    }

    proptest! {
        #[test]
        fn mollifier_bounded_and_matches_quotient(m in -1e3f64..1e3, var in 0.0f64..1e3) {
            let d = mollified_direction(m, var).unwrap();
            prop_assert!(d.abs() <= 1.0);
            if var > 0.0 {
                prop_assert!(d.abs() < 1.0);
            }
            if m != 0.0 {
                let quotient = m / (m * m + var).sqrt();
                prop_assert!((d - quotient).abs() <= 1e-12);
            }
            if var == 0.0 && m != 0.0 {
                prop_assert_eq!(d.abs(), 1.0);
            }
        }

        #[test]
        fn trust_region_minimizer_by_grid_search(m in -100.0f64..100.0, var in 0.0f64..100.0) {
            let r = trust_radius(m, var).unwrap();
            let n = 2000;
            let mut best = (f64::INFINITY, 0.0);
            for i in 0..=n {
                let theta = -r + 2.0 * r * i as f64 / n as f64;
                let obj = -m * theta;
                if obj < best.0 {
                    best = (obj, theta);
                }
            }
            let d = mollified_direction(m, var).unwrap();
            if m != 0.0 {
                prop_assert!((best.1 - d).abs() <= 1e-12);
            }
            prop_assert!((steepest_step(m, r) - d).abs() <= 1e-15);
        }

        #[test]
        fn prop2_zero_iff_equal(b1 in 0.01f64..0.99, b2 in 0.01f64..0.99) {
            let c = prop2_condition(b1, b2).unwrap();
            prop_assert_eq!(c == 0.0, b1 == b2);
            prop_assert_eq!(prop2_condition(b1, b1).unwrap(), 0.0);
        }

        #[test]
        fn prop1_random_signals(
            signal in prop::collection::vec(-50.0f64..50.0, 1..300),
            beta in 0.0f64..0.999,
        ) {
            let r = check_prop1(&signal, beta, 1e-9).unwrap();
            prop_assert!(r.passed(), "{:?}", r);
        }
    }
}
