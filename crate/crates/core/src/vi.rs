//! Online Gaussian variational inference over a gradient stream.
//!
//! Given a belief `N(m_k, s_k)` and a new observation `g`, the update solves
//!
//! ```text
//! min_{m, s > 0}  -log p(g | m, s) + lambda * KL(N(m_k, s_k) || N(m, s))
//! ```
//!
//! with `-log p = 1/2 log s + (g - m)^2 / (2 s)` and the Gaussian KL. The
//! minimizer is an exponential moving average of the mean together with the
//! variance recursion `s' = beta s + beta (1 - beta) (m - g)^2`, where
//! `beta = lambda / (1 + lambda)` is the weight the KL term gives the prior.
//! This is exactly the `(m, delta)` pair kept by equal-beta Adam.
//!
//! [`vi_numeric_oracle`] minimizes the same objective by nested golden-section
//! search and shares nothing with the closed form.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ema::check_beta;
use crate::error::{ensure, Error, Result};
use crate::exec::Execution;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        ensure(mean.is_finite(), || {
            format!("mean must be finite, got {mean}")
        })?;
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::Domain(format!(
                "variance must be positive, got {variance}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Zero-mean, zero-variance starting point. Only valid as the prior of
    /// the first update; the objective is undefined there.
    pub fn initial() -> Self {
        Self {
            mean: 0.0,
            variance: 0.0,
        }
    }
}

/// Gaussian negative log-likelihood plus `lambda` times the KL divergence to the prior.
pub fn vi_objective(
    prior: &GaussianBelief,
    candidate: &GaussianBelief,
    g: f64,
    lambda: f64,
) -> Result<f64> {
    check_lambda(lambda)?;
    for (name, v) in [("candidate", candidate.variance), ("prior", prior.variance)] {
        if v.is_nan() || v <= 0.0 {
            return Err(Error::Domain(format!(
                "{name} variance must be positive, got {v}"
            )));
        }
    }
    let s = candidate.variance;
    let nll = 0.5 * s.ln() + (g - candidate.mean).powi(2) / (2.0 * s);
    let ratio = prior.variance / s;
    let kl = 0.5 * (ratio + (prior.mean - candidate.mean).powi(2) / s - 1.0 - ratio.ln());
    Ok(nll + lambda * kl)
}

/// Momentum parameter induced by a KL weight: `lambda / (1 + lambda)`.
pub fn lambda_beta(lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda.is_infinite() {
        return Ok(1.0);
    }
    Ok(lambda / (1.0 + lambda))
}

/// Inverse of [`lambda_beta`] for `beta` in `[0, 1)`.
pub fn beta_lambda(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(beta / (1.0 - beta))
}

/// Closed-form minimizer of [`vi_objective`].
pub fn vi_update(prior: &GaussianBelief, g: f64, lambda: f64) -> Result<GaussianBelief> {
    let beta = lambda_beta(lambda)?;
    if beta == 1.0 {
        return Ok(*prior);
    }
    vi_update_beta(prior, g, beta)
}

/// [`vi_update`] parameterized directly by `beta`.
pub fn vi_update_beta(prior: &GaussianBelief, g: f64, beta: f64) -> Result<GaussianBelief> {
    check_beta(beta)?;
    ensure(prior.variance >= 0.0, || {
        format!("prior variance must be >= 0, got {}", prior.variance)
    })?;
    let dev = prior.mean - g;
    Ok(GaussianBelief {
        mean: beta * prior.mean + (1.0 - beta) * g,
        variance: beta * prior.variance + beta * (1.0 - beta) * dev * dev,
    })
}

/// Streams `grads` through [`vi_update_beta`] from `start`, returning every belief.
pub fn vi_stream(start: GaussianBelief, grads: &[f64], beta: f64) -> Result<Vec<GaussianBelief>> {
    let mut belief = start;
    grads
        .iter()
        .map(|&g| {
            belief = vi_update_beta(&belief, g, beta)?;
            Ok(belief)
        })
        .collect()
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the minimum of a unimodal `f` on `[a, b]`.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..400 {
        if (b - a).abs() <= tol * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Derivative-free minimization of [`vi_objective`]: golden-section over
/// `log variance` after a coarse log-spaced bracket scan, with an inner
/// golden-section search over the mean.
pub fn vi_numeric_oracle(
    prior: &GaussianBelief,
    g: f64,
    lambda: f64,
    tol: f64,
) -> Result<GaussianBelief> {
    ensure(lambda > 0.0 && lambda.is_finite(), || {
        format!("oracle needs a finite positive lambda, got {lambda}")
    })?;
    ensure(tol > 0.0, || "tolerance must be positive".into())?;
    GaussianBelief::new(prior.mean, prior.variance)?;

    let objective = |mean: f64, log_var: f64| {
        let candidate = GaussianBelief {
            mean,
            variance: log_var.exp(),
        };
        vi_objective(prior, &candidate, g, lambda).unwrap_or(f64::INFINITY)
    };
    let (lo_m, hi_m) = if prior.mean <= g {
        (prior.mean, g)
    } else {
        (g, prior.mean)
    };
    let pad = 1e-3 * (hi_m - lo_m) + 1e-12;
    let best_mean = |log_var: f64| {
        if hi_m == lo_m {
            lo_m
        } else {
            golden_section(|m| objective(m, log_var), lo_m - pad, hi_m + pad, 1e-15)
        }
    };
    let profile = |log_var: f64| objective(best_mean(log_var), log_var);

    let scale = prior
        .variance
        .max((prior.mean - g).powi(2))
        .max(f64::MIN_POSITIVE);
    let (lo, hi) = (scale.ln() - 30.0, scale.ln() + 30.0);
    let n = 240;
    let grid: Vec<f64> = (0..=n)
        .map(|i| lo + (hi - lo) * i as f64 / n as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&s| profile(s)).collect();
    let (imin, _) = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| Error::OracleFailure("empty bracket grid".into()))?;
    if imin == 0 || imin == n || !values[imin].is_finite() {
        return Err(Error::OracleFailure(format!(
            "minimum at bracket edge (log variance {:.3}) for prior {:?}, g {g}, lambda {lambda}",
            grid[imin], prior
        )));
    }
    let log_var = golden_section(profile, grid[imin - 1], grid[imin + 1], tol);
    Ok(GaussianBelief {
        mean: best_mean(log_var),
        variance: log_var.exp(),
    })
}

fn check_lambda(lambda: f64) -> Result<()> {
    ensure(lambda >= 0.0, || {
        format!("lambda must be >= 0, got {lambda}")
    })
}

/// One random instance compared against the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub prior: GaussianBelief,
    pub g: f64,
    pub lambda: f64,
    pub closed_form: GaussianBelief,
    pub oracle: GaussianBelief,
    /// `objective(closed_form) - objective(oracle)`; should be <= 0 up to round-off.
    pub objective_gap: f64,
    /// Max of the mean and variance differences.
    pub parameter_gap: f64,
    /// Smallest `objective(candidate) - objective(closed_form)` over random candidates.
    pub candidate_margin: f64,
}

/// Draws `instances` random `(prior, g, lambda)` triples and checks the closed
/// form against [`vi_numeric_oracle`] and `candidates` random perturbations.
pub fn oracle_suite(
    instances: u64,
    candidates: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<OracleCase>> {
    let ids: Vec<u64> = (0..instances).collect();
    exec.map(&ids, |&i| {
        let mut r = rng::stream(seed, "vi-instance", i);
        let prior = GaussianBelief {
            mean: r.random_range(-3.0..3.0),
            variance: 10f64.powf(r.random_range(-2.0..2.0)),
        };
        let z: f64 = r.sample(StandardNormal);
        let g = prior.mean + 2.0 * z * prior.variance.sqrt();
        let lambda = 10f64.powf(r.random_range(-2.0..2.0));
        let closed_form = vi_update(&prior, g, lambda)?;
        let oracle = vi_numeric_oracle(&prior, g, lambda, 1e-12)?;
        let f_closed = vi_objective(&prior, &closed_form, g, lambda)?;
        let f_oracle = vi_objective(&prior, &oracle, g, lambda)?;
        let mut margin = f64::INFINITY;
        for _ in 0..candidates {
            let zm: f64 = r.sample(StandardNormal);
            let zv: f64 = r.sample(StandardNormal);
            let spread = 10f64.powf(r.random_range(-4.0..0.5));
            let cand = GaussianBelief {
                mean: closed_form.mean + spread * zm * closed_form.variance.sqrt(),
                variance: closed_form.variance * (spread * zv).exp(),
            };
            margin = margin.min(vi_objective(&prior, &cand, g, lambda)? - f_closed);
        }
        Ok(OracleCase {
            prior,
            g,
            lambda,
            closed_form,
            oracle,
            objective_gap: f_closed - f_oracle,
            parameter_gap: (closed_form.mean - oracle.mean)
                .abs()
                .max((closed_form.variance - oracle.variance).abs()),
            candidate_margin: margin,
        })
    })
    .into_iter()
    .collect()
}
