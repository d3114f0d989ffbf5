//! Linear warmup followed by cosine annealing.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub peak_lr: f64,
    pub floor_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
}

impl Schedule {
    pub fn new(
        peak_lr: f64,
        floor_lr: f64,
        total_steps: u64,
        warmup_fraction: f64,
    ) -> Result<Self> {
        let s = Self {
            peak_lr,
            floor_lr,
            total_steps,
            warmup_fraction,
        };
        s.validate()?;
        Ok(s)
    }

    /// Constant zero rate, handy for control runs.
    pub fn zero(total_steps: u64) -> Self {
        Self {
            peak_lr: 0.0,
            floor_lr: 0.0,
            total_steps,
            warmup_fraction: 0.0,
        }
    }

    // A zero peak is accepted so that `lr = 0` control runs can share the
    // same code path as tuned runs.
    pub fn validate(&self) -> Result<()> {
        ensure(self.peak_lr >= 0.0 && self.peak_lr.is_finite(), || {
            format!("peak_lr must be finite and >= 0, got {}", self.peak_lr)
        })?;
        ensure(
            self.floor_lr >= 0.0 && self.floor_lr <= self.peak_lr,
            || format!("floor_lr must lie in [0, peak_lr], got {}", self.floor_lr),
        )?;
        ensure(self.total_steps > 0, || {
            "total_steps must be positive".into()
        })?;
        ensure((0.0..1.0).contains(&self.warmup_fraction), || {
            format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )
        })
    }

    /// Last step of the linear ramp; always leaves at least one annealing step.
    pub fn warmup_steps(&self) -> u64 {
        let w = (self.warmup_fraction * self.total_steps as f64).round() as u64;
        w.min(self.total_steps - 1)
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        ensure(step <= self.total_steps, || {
            format!("step {step} outside [0, {}]", self.total_steps)
        })?;
        let w = self.warmup_steps();
        if step < w {
            return Ok(self.peak_lr * step as f64 / w as f64);
        }
        let progress = (step - w) as f64 / (self.total_steps - w) as f64;
        Ok(self.floor_lr + (self.peak_lr - self.floor_lr) * 0.5 * (1.0 + (PI * progress).cos()))
    }
}

/// Free-function form of [`Schedule::lr_at`].
pub fn lr_at(sched: &Schedule, step: u64) -> Result<f64> {
    sched.lr_at(step)
}
