//! Normalized exponential moving averages.
//!
//! An [`EmaBuffer`] tracks `value <- beta * value + (1 - beta) * sample`.
//! The very first sample either enters the recursion against a zero buffer
//! ([`InitMode::ZeroInit`]) or replaces the buffer outright
//! ([`InitMode::FirstSampleInit`]).

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ensure, Result};

/// How an EMA buffer treats its first sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Start from zero and run the recursion from the first sample on.
    #[default]
    ZeroInit,
    /// Seed the buffer with the first sample.
    FirstSampleInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaBuffer {
    value: Vec<f64>,
    beta: f64,
    step: u64,
    init_mode: InitMode,
}

impl EmaBuffer {
    pub fn new(dim: usize, beta: f64, init_mode: InitMode) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self {
            value: vec![0.0; dim],
            beta,
            step: 0,
            init_mode,
        })
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of samples folded in so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn init_mode(&self) -> InitMode {
        self.init_mode
    }

    pub fn dim(&self) -> usize {
        self.value.len()
    }

    /// Folds one sample into the buffer.
    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        check_dim(self.value.len(), sample.len())?;
        if self.step == 0 && self.init_mode == InitMode::FirstSampleInit {
            self.value.copy_from_slice(sample);
        } else {
            let beta = self.beta;
            for (v, &s) in self.value.iter_mut().zip(sample) {
                *v = beta * *v + (1.0 - beta) * s;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Like [`update`](Self::update) but feeds `f(i)` for coordinate `i`,
    /// avoiding a temporary vector for derived samples (squares, signs, ...).
    pub fn update_with(&mut self, mut f: impl FnMut(usize) -> f64) {
        if self.step == 0 && self.init_mode == InitMode::FirstSampleInit {
            for (i, v) in self.value.iter_mut().enumerate() {
                *v = f(i);
            }
        } else {
            let beta = self.beta;
            for (i, v) in self.value.iter_mut().enumerate() {
                *v = beta * *v + (1.0 - beta) * f(i);
            }
        }
        self.step += 1;
    }

    /// Bias-corrected copy of the current value. Requires at least one update.
    pub fn corrected(&self) -> Result<Vec<f64>> {
        bias_correct(&self.value, self.beta, self.step)
    }
}

/// Functional form of [`EmaBuffer::update`].
pub fn ema_update(mut buf: EmaBuffer, sample: &[f64]) -> Result<EmaBuffer> {
    buf.update(sample)?;
    Ok(buf)
}

/// Divides a zero-initialized EMA by `1 - beta^step`.
pub fn bias_correct(value: &[f64], beta: f64, step: u64) -> Result<Vec<f64>> {
    check_beta(beta)?;
    ensure(step >= 1, || "bias correction needs step >= 1".to_string())?;
    let c = bias_factor(beta, step);
    Ok(value.iter().map(|v| v / c).collect())
}

/// `1 - beta^step`.
pub(crate) fn bias_factor(beta: f64, step: u64) -> f64 {
    let exp = i32::try_from(step).unwrap_or(i32::MAX);
    1.0 - beta.powi(exp)
}

/// Maps accumulation factors `kappa` onto momentum parameters
/// `1 - kappa * (1 - beta_base)`, preserving order.
pub fn beta_grid(beta_base: f64, kappas: &[f64]) -> Result<Vec<f64>> {
    check_beta(beta_base)?;
    kappas
        .iter()
        .map(|&kappa| {
            ensure(kappa > 0.0 && kappa.is_finite(), || {
                format!("kappa must be positive, got {kappa}")
            })?;
            let beta = 1.0 - kappa * (1.0 - beta_base);
            ensure((0.0..1.0).contains(&beta), || {
                format!("kappa {kappa} maps beta_base {beta_base} to {beta}, outside [0, 1)")
            })?;
            Ok(beta)
        })
        .collect()
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    ensure((0.0..1.0).contains(&beta), || {
        format!("beta must lie in [0, 1), got {beta}")
    })
}
