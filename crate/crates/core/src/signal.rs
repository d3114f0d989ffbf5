//! Optimizer direction maps viewed as causal filters on scalar gradient
//! signals. Every filter here streams the signal through
//! [`optim::direction`](crate::optim::direction) with `eps = 0` and no bias
//! correction, so there is one implementation of each update rule.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ema::{check_beta, InitMode};
use crate::error::{check_finite, ensure, Error, Result};
use crate::exec::Execution;
use crate::optim::{direction, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub amplitude: f64,
    /// Radians per step.
    pub frequency: f64,
    pub decay: f64,
    pub length: usize,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            amplitude: 1.8,
            frequency: 0.03,
            decay: 0.0025,
            length: 2000,
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(self.length >= 1, || "signal length must be >= 1".into())?;
        ensure(self.decay >= 0.0, || {
            format!("decay must be >= 0, got {}", self.decay)
        })?;
        ensure(
            self.amplitude.is_finite() && self.frequency.is_finite() && self.decay.is_finite(),
            || "signal parameters must be finite".into(),
        )
    }

    /// `2 pi / frequency`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.frequency.abs()
    }
}

/// `g_k = amplitude * sin(frequency * k) * exp(-decay * k)` for `k < length`.
pub fn gen_signal(spec: &SignalSpec) -> Vec<f64> {
    (0..spec.length)
        .map(|k| {
            let k = k as f64;
            spec.amplitude * (spec.frequency * k).sin() * (-spec.decay * k).exp()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Sign,
    AdamEqualBeta,
    Signum,
    EmaSign,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [
        FilterKind::Sign,
        FilterKind::AdamEqualBeta,
        FilterKind::Signum,
        FilterKind::EmaSign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Sign => "sign",
            FilterKind::AdamEqualBeta => "adam_equal_beta",
            FilterKind::Signum => "signum",
            FilterKind::EmaSign => "ema_sign",
        }
    }

    pub fn optimizer_kind(self) -> OptimizerKind {
        match self {
            FilterKind::Sign => OptimizerKind::SignSgd,
            FilterKind::AdamEqualBeta => OptimizerKind::AdamEqualBeta,
            FilterKind::Signum => OptimizerKind::Signum,
            FilterKind::EmaSign => OptimizerKind::EmaSign,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        match key.as_str() {
            "sign" | "sign_sgd" => Ok(FilterKind::Sign),
            "adam" | "adam_equal_beta" => Ok(FilterKind::AdamEqualBeta),
            "signum" => Ok(FilterKind::Signum),
            "ema_sign" => Ok(FilterKind::EmaSign),
            _ => Err(Error::Config(format!(
                "unknown filter `{s}` (expected sign, adam_equal_beta, signum or ema_sign)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub kind: FilterKind,
    pub beta: f64,
    #[serde(default)]
    pub init_mode: InitMode,
}

impl Filter {
    pub fn new(kind: FilterKind, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            kind,
            beta,
            init_mode: InitMode::ZeroInit,
        })
    }

    pub fn with_init_mode(mut self, init_mode: InitMode) -> Self {
        self.init_mode = init_mode;
        self
    }

    /// Optimizer configuration the filter runs.
    pub fn config(&self) -> OptimizerConfig {
        OptimizerConfig::for_kind(self.kind.optimizer_kind(), self.beta)
            .raw()
            .with_init_mode(self.init_mode)
    }

    pub fn label(&self) -> String {
        match self.kind {
            FilterKind::Sign => "sign".into(),
            k => format!("{k}(beta={})", self.beta),
        }
    }
}

/// Direction `d_k` after feeding `signal[0..=k]`.
pub fn filter_response(filter: &Filter, signal: &[f64]) -> Result<Vec<f64>> {
    check_finite(signal)?;
    let config = filter.config();
    config.validate()?;
    let mut state = OptimizerState::new(&config, 1)?;
    signal
        .iter()
        .map(|&g| Ok(direction(&config, &mut state, &[g])?.direction[0]))
        .collect()
}

/// Worst-case deviations over the sampled signals. Each field is a maximum
/// absolute difference (or magnitude for `max_abs_output`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub label: String,
    pub trials: usize,
    pub length: usize,
    pub tolerance: f64,
    pub causality_gap: f64,
    pub scaling_gap: f64,
    pub oddness_gap: f64,
    pub max_abs_output: f64,
}

impl PropertyReport {
    pub fn causal(&self) -> bool {
        self.causality_gap <= self.tolerance
    }

    pub fn scale_invariant(&self) -> bool {
        self.scaling_gap <= self.tolerance
    }

    pub fn odd(&self) -> bool {
        self.oddness_gap <= self.tolerance
    }

    pub fn bounded(&self) -> bool {
        self.max_abs_output <= 1.0 + self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.causal() && self.scale_invariant() && self.odd() && self.bounded()
    }
}

pub const SCALES: [f64; 3] = [0.5, 2.0, 10.0];

fn max_gap(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).fold(0.0, f64::max)
}

/// Random test signal: i.i.d. standard normal samples with a common scale
/// drawn log-uniformly from `[1e-3, 1e3]`.
pub fn random_signal<R: Rng + ?Sized>(rng: &mut R, length: usize) -> Vec<f64> {
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    (0..length)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Property check for an arbitrary signal transform. Errors raised by the
/// transform abort the check; property violations are only reported.
pub fn check_filter_properties<F>(
    label: &str,
    transform: F,
    trials: usize,
    length: usize,
    tol: f64,
    seed: u64,
    exec: Execution,
) -> Result<PropertyReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    ensure(trials >= 1, || "trials must be >= 1".into())?;
    ensure(length >= 1, || "signal length must be >= 1".into())?;
    let indices: Vec<u64> = (0..trials as u64).collect();
    let per_trial = exec.map(&indices, |&i| -> Result<[f64; 4]> {
        let mut rng = rng::stream(seed, "filter-signal", i);
        let g = random_signal(&mut rng, length);
        let d = transform(&g)?;

        let mut cuts = vec![0, length / 2, length - 1];
        cuts.push(rng.random_range(0..length));
        let mut causality = 0.0f64;
        for cut in cuts {
            let prefix = transform(&g[..=cut])?;
            causality = causality.max(max_gap(&prefix, &d[..=cut], |x, y| (x - y).abs()));
        }

        let mut scaling = 0.0f64;
        for alpha in SCALES {
            let scaled: Vec<f64> = g.iter().map(|x| alpha * x).collect();
            scaling = scaling.max(max_gap(&transform(&scaled)?, &d, |x, y| (x - y).abs()));
        }

        let neg: Vec<f64> = g.iter().map(|x| -x).collect();
        let oddness = max_gap(&transform(&neg)?, &d, |x, y| (x + y).abs());
        let bound = d.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        Ok([causality, scaling, oddness, bound])
    });

    let mut worst = [0.0f64; 4];
    for row in per_trial {
        for (w, v) in worst.iter_mut().zip(row?) {
            *w = w.max(v);
        }
    }
    Ok(PropertyReport {
        label: label.to_string(),
        trials,
        length,
        tolerance: tol,
        causality_gap: worst[0],
        scaling_gap: worst[1],
        oddness_gap: worst[2],
        max_abs_output: worst[3],
    })
}

/// Causality, positive-scale invariance, oddness and boundedness of `filter`
/// over `trials` random signals.
pub fn check_properties(
    filter: &Filter,
    trials: usize,
    length: usize,
    tol: f64,
    seed: u64,
    exec: Execution,
) -> Result<PropertyReport> {
    filter.config().validate()?;
    check_filter_properties(
        &filter.label(),
        |g| filter_response(filter, g),
        trials,
        length,
        tol,
        seed,
        exec,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub label: String,
    pub burn_in: usize,
    pub max_gap: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares the response to the damped signal with the response to its
/// undamped twin, skipping the first period.
pub fn decay_blindness(filter: &Filter, spec: &SignalSpec, tol: f64) -> Result<DecayReport> {
    spec.validate()?;
    let undamped = SignalSpec {
        decay: 0.0,
        ..*spec
    };
    let a = filter_response(filter, &gen_signal(spec))?;
    let b = filter_response(filter, &gen_signal(&undamped))?;
    let burn_in = (spec.period().ceil() as usize).min(spec.length);
    let max_gap = max_gap(&a[burn_in..], &b[burn_in..], |x, y| (x - y).abs());
    Ok(DecayReport {
        label: filter.label(),
        burn_in,
        max_gap,
        tolerance: tol,
        passed: max_gap <= tol,
    })
}

pub const DENSITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DensityOutcome {
    Found {
        signal: Vec<f64>,
        achieved: f64,
    },
    NotFound {
        closest_signal: Vec<f64>,
        closest: f64,
    },
}

impl DensityOutcome {
    pub fn found(&self) -> bool {
        matches!(self, DensityOutcome::Found { .. })
    }

    pub fn achieved(&self) -> f64 {
        match self {
            DensityOutcome::Found { achieved, .. } => *achieved,
            DensityOutcome::NotFound { closest, .. } => *closest,
        }
    }
}

fn two_phase(a: f64, k: usize, t: f64) -> Vec<f64> {
    let mut s = vec![a; k];
    s.push(t);
    s
}

/// Searches signals `[a; k] ++ [t]` for one whose last output `d_k` lies
/// within [`DENSITY_TOLERANCE`] of `target`. `a = sign(target)` (or 1), and
/// the final value is located by a coarse scan over `t / a` followed by
/// bisection on the first bracketing interval.
pub fn density_witness(filter: &Filter, target: f64, k: usize) -> Result<DensityOutcome> {
    ensure(target.abs() <= 1.0, || {
        format!("target must lie in [-1, 1], got {target}")
    })?;
    ensure(k >= 1, || "prefix length must be >= 1".into())?;
    let a = if target < 0.0 { -1.0 } else { 1.0 };
    let last = |t: f64| -> Result<f64> {
        Ok(*filter_response(filter, &two_phase(a, k, t))?
            .last()
            .expect("non-empty signal"))
    };

    let mut grid: Vec<f64> = (-40..=40).map(|j| 2f64.powf(j as f64 / 2.0)).collect();
    grid.extend(grid.clone().into_iter().map(|x| -x));
    grid.push(0.0);
    grid.sort_by(f64::total_cmp);
    let ts: Vec<f64> = grid.into_iter().map(|r| a * r).collect();
    let values = ts.iter().map(|&t| last(t)).collect::<Result<Vec<f64>>>()?;

    let (mut best_t, mut best_d) = (ts[0], values[0]);
    for (&t, &d) in ts.iter().zip(&values) {
        if (d - target).abs() < (best_d - target).abs() {
            best_t = t;
            best_d = d;
        }
    }
    if (best_d - target).abs() <= DENSITY_TOLERANCE {
        return Ok(DensityOutcome::Found {
            signal: two_phase(a, k, best_t),
            achieved: best_d,
        });
    }

    let bracket = (1..ts.len()).find(|&i| (values[i - 1] - target) * (values[i] - target) < 0.0);
    if let Some(i) = bracket {
        let (mut lo, mut hi) = (ts[i - 1], ts[i]);
        let lo_sign = (values[i - 1] - target).signum();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let d = last(mid)?;
            if (d - target).abs() < (best_d - target).abs() {
                best_t = mid;
                best_d = d;
            }
            if (d - target).abs() <= DENSITY_TOLERANCE * 1e-3 || mid == lo || mid == hi {
                break;
            }
            if (d - target).signum() == lo_sign {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let signal = two_phase(a, k, best_t);
    Ok(if (best_d - target).abs() <= DENSITY_TOLERANCE {
        DensityOutcome::Found {
            signal,
            achieved: best_d,
        }
    } else {
        DensityOutcome::NotFound {
            closest_signal: signal,
            closest: best_d,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::sign;
    use approx::assert_relative_eq;

    fn filter(kind: FilterKind, beta: f64) -> Filter {
        Filter::new(kind, beta).unwrap()
    }

    #[test]
    fn signal_generation() {
        let g = gen_signal(&SignalSpec {
            length: 3,
            ..SignalSpec::default()
        });
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 0.0);
        assert_relative_eq!(
            g[1],
            1.8 * 0.03f64.sin() * (-0.0025f64).exp(),
            epsilon = 1e-15
        );
        let zero = gen_signal(&SignalSpec {
            amplitude: 0.0,
            ..SignalSpec::default()
        });
        assert!(zero.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn undamped_signal_is_periodic() {
        // frequency 2 pi / 50 gives an integer period
        let spec = SignalSpec {
            amplitude: 1.0,
            frequency: 2.0 * PI / 50.0,
            decay: 0.0,
            length: 500,
        };
        let g = gen_signal(&spec);
        for k in 0..450 {
            assert!((g[k] - g[k + 50]).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_filter_is_coordinatewise_sign() {
        let g = [0.3, -2.0, 0.0, 5.0];
        let d = filter_response(&filter(FilterKind::Sign, 0.9), &g).unwrap();
        assert_eq!(d, g.iter().map(|&x| sign(x)).collect::<Vec<_>>());
    }

    #[test]
    fn adam_filter_with_zero_beta_is_sign() {
        let mut r = rng::stream(3, "t", 0);
        let g = random_signal(&mut r, 200);
        let d = filter_response(&filter(FilterKind::AdamEqualBeta, 0.0), &g).unwrap();
        for (x, y) in d.iter().zip(&g) {
            assert_eq!(*x, sign(*y));
        }
    }

    #[test]
    fn constant_signal_transient() {
        let beta = 0.9;
        let f = filter(FilterKind::AdamEqualBeta, beta);
        let d = filter_response(&f, &[2.5; 30]).unwrap();
        for (k, dk) in d.iter().enumerate() {
            let want = (1.0 - beta.powi(k as i32 + 1)).sqrt();
            assert!((dk - want).abs() < 1e-12, "k={k}: {dk} vs {want}");
        }
        let d = filter_response(&f.with_init_mode(InitMode::FirstSampleInit), &[2.5; 30]).unwrap();
        assert!(d.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn filter_wraps_the_optimizer() {
        let f = filter(FilterKind::AdamEqualBeta, 0.95);
        let mut r = rng::stream(1, "t", 0);
        let g = random_signal(&mut r, 300);
        let d = filter_response(&f, &g).unwrap();
        let mut opt = crate::optim::Optimizer::new(f.config(), 1).unwrap();
        let mut w = [0.0];
        for (gi, di) in g.iter().zip(&d) {
            assert_eq!(opt.step(&mut w, &[*gi], 0.0).unwrap().direction[0], *di);
        }
    }

    #[test]
    fn non_finite_input_is_rejected() {
        assert!(filter_response(&filter(FilterKind::Signum, 0.9), &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn all_filters_pass_properties() {
        for kind in FilterKind::ALL {
            let rep =
                check_properties(&filter(kind, 0.9), 20, 128, 1e-12, 5, Execution::Sequential)
                    .unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }

    #[test]
    fn broken_filter_fails_oddness() {
        let f = filter(FilterKind::AdamEqualBeta, 0.9);
        let broken = |g: &[f64]| -> Result<Vec<f64>> {
            Ok(filter_response(&f, g)?
                .into_iter()
                .map(|d| d + 0.1)
                .collect())
        };
        let rep = check_filter_properties("broken", broken, 5, 64, 1e-12, 0, Execution::Sequential)
            .unwrap();
        assert!(!rep.odd());
        assert!(rep.causal());
        assert!(!rep.passed());
    }

    #[test]
    fn decay_blindness_cases() {
        let f = filter(FilterKind::AdamEqualBeta, 0.95);
        let undamped = SignalSpec {
            decay: 0.0,
            ..SignalSpec::default()
        };
        assert_eq!(decay_blindness(&f, &undamped, 0.05).unwrap().max_gap, 0.0);
        let rep = decay_blindness(&f, &SignalSpec::default(), 0.05).unwrap();
        assert_eq!(rep.burn_in, 210);
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn rescaled_damped_signal_gives_identical_response() {
        let f = filter(FilterKind::AdamEqualBeta, 0.95);
        let g = gen_signal(&SignalSpec::default());
        let scaled: Vec<f64> = g.iter().map(|x| 7.0 * x).collect();
        let a = filter_response(&f, &g).unwrap();
        let b = filter_response(&f, &scaled).unwrap();
        assert!(max_gap(&a, &b, |x, y| (x - y).abs()) <= 1e-12);
    }

    #[test]
    fn density_targets() {
        let f = filter(FilterKind::AdamEqualBeta, 0.9).with_init_mode(InitMode::FirstSampleInit);
        for target in [1.0, 0.0, 0.37, -0.37, -0.99, 0.5] {
            let out = density_witness(&f, target, 10).unwrap();
            assert!(out.found(), "target {target}: {out:?}");
            if let DensityOutcome::Found { signal, achieved } = out {
                let d = filter_response(&f, &signal).unwrap();
                assert_eq!(*d.last().unwrap(), achieved);
                assert!((achieved - target).abs() <= DENSITY_TOLERANCE);
            }
        }
    }

    #[test]
    fn density_zero_init_ceiling() {
        // zero init caps |d_k| at sqrt(1 - beta^(k+1)) for this family
        let f = filter(FilterKind::AdamEqualBeta, 0.9);
        let ceiling = (1.0 - 0.9f64.powi(11)).sqrt();
        let inside = density_witness(&f, 0.37, 10).unwrap();
        assert!(inside.found());
        let out = density_witness(&f, 0.99, 10).unwrap();
        assert!(!out.found());
        assert!(out.achieved() <= ceiling + 1e-9);
    }

    #[test]
    fn sign_filter_has_no_intermediate_witness() {
        let out = density_witness(&filter(FilterKind::Sign, 0.9), 0.37, 10).unwrap();
        assert!(!out.found());
    }

    #[test]
    fn filter_kind_parsing() {
        assert_eq!(
            "adam".parse::<FilterKind>().unwrap(),
            FilterKind::AdamEqualBeta
        );
        assert_eq!(
            "ema-sign".parse::<FilterKind>().unwrap(),
            FilterKind::EmaSign
        );
        assert!("median".parse::<FilterKind>().is_err());
    }
}
