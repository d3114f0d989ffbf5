//! Global-norm and coordinatewise clipping.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Clipping applied by an optimizer. `None` disables the corresponding clip.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClipConfig {
    /// Global l2 threshold applied to the raw gradient before any moving average.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gclip_threshold: Option<f64>,
    /// Coordinatewise bound applied to the momentum buffer (SGD only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cclip_bound: Option<f64>,
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gclip", self.gclip_threshold), ("cclip", self.cclip_bound)] {
            if let Some(v) = v {
                ensure(v > 0.0 && v.is_finite(), || {
                    format!("{name} threshold must be positive, got {v}")
                })?;
            }
        }
        Ok(())
    }
}

/// Rescales `g` by `min(1, threshold / ||g||_2)`.
pub fn gclip(g: &[f64], threshold: f64) -> Vec<f64> {
    let mut out = g.to_vec();
    gclip_in_place(&mut out, threshold);
    out
}

pub(crate) fn gclip_in_place(g: &mut [f64], threshold: f64) {
    let norm = l2_norm(g);
    if norm > threshold {
        let scale = threshold / norm;
        g.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Clamps every coordinate into `[-bound, bound]`.
pub fn cclip(v: &[f64], bound: f64) -> Vec<f64> {
    v.iter().map(|x| x.clamp(-bound, bound)).collect()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
