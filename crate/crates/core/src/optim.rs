//! Optimizer family as step functions over explicit state.
//!
//! Every optimizer is described by an [`OptimizerConfig`] and advanced through
//! [`direction`], which consumes one gradient, advances the state buffers once
//! and returns the unscaled step direction. [`apply_step`] turns a direction
//! into a parameter update with decoupled weight decay.
//!
//! [`OptimizerKind::AdamEqualBeta`] is Adam with `beta1 == beta2` written in
//! mean/variance form: it keeps `m` and a nonnegative variance term `delta`
//! advanced as `delta <- beta * delta + beta * (1 - beta) * (m_prev - g)^2`,
//! and steps along `m / sqrt(m^2 + delta)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clip::{cclip, gclip_in_place, l2_norm, ClipConfig};
use crate::ema::{bias_factor, check_beta, EmaBuffer, InitMode};
use crate::error::{check_dim, check_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// SGD with EMA momentum (dampening `1 - beta`).
    Sgd,
    SignSgd,
    /// Sign of the momentum.
    Signum,
    /// Momentum of the sign.
    EmaSign,
    RmsProp,
    Adam,
    AdamEqualBeta,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 7] = [
        OptimizerKind::Sgd,
        OptimizerKind::SignSgd,
        OptimizerKind::Signum,
        OptimizerKind::EmaSign,
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::AdamEqualBeta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::SignSgd => "sign_sgd",
            OptimizerKind::Signum => "signum",
            OptimizerKind::EmaSign => "ema_sign",
            OptimizerKind::RmsProp => "rms_prop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamEqualBeta => "adam_equal_beta",
        }
    }

    /// Whether the optimizer keeps a second-moment / variance estimate.
    pub fn tracks_variance(self) -> bool {
        matches!(self, OptimizerKind::Adam | OptimizerKind::AdamEqualBeta)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let kind = match norm.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "sign_sgd" | "signsgd" | "sign" => OptimizerKind::SignSgd,
            "signum" => OptimizerKind::Signum,
            "ema_sign" | "emasign" => OptimizerKind::EmaSign,
            "rms_prop" | "rmsprop" => OptimizerKind::RmsProp,
            "adam" => OptimizerKind::Adam,
            "adam_equal_beta" | "adam_eq" | "adameq" => OptimizerKind::AdamEqualBeta,
            _ => return Err(Error::Config(format!("unknown optimizer `{s}`"))),
        };
        Ok(kind)
    }
}

/// Where `epsilon` enters a normalized direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonPlacement {
    /// `x / (sqrt(s) + eps)`
    #[default]
    OutsideSqrt,
    /// `x / sqrt(s + eps)`
    InsideSqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    /// For Signum a positive value turns the sign into the fixed mollifier
    /// `m / sqrt(m^2 + eps)` (or `m / (|m| + eps)` outside the root).
    pub epsilon: f64,
    #[serde(default)]
    pub epsilon_placement: EpsilonPlacement,
    pub weight_decay: f64,
    /// Used by Adam, AdamEqualBeta, RmsProp and mollified Signum. SGD, SignSgd
    /// and EmaSign ignore it.
    pub bias_correction: bool,
    #[serde(default)]
    pub init_mode: InitMode,
    #[serde(default)]
    pub clip: ClipConfig,
}

impl OptimizerConfig {
    fn base(
        kind: OptimizerKind,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        bias_correction: bool,
    ) -> Self {
        Self {
            kind,
            beta1,
            beta2,
            epsilon,
            epsilon_placement: EpsilonPlacement::OutsideSqrt,
            weight_decay: 0.0,
            bias_correction,
            init_mode: InitMode::ZeroInit,
            clip: ClipConfig::default(),
        }
    }

    pub fn sgd(beta: f64) -> Self {
        Self::base(OptimizerKind::Sgd, beta, beta, 0.0, false)
    }

    pub fn sign_sgd() -> Self {
        Self::base(OptimizerKind::SignSgd, 0.0, 0.0, 0.0, false)
    }

    pub fn signum(beta: f64) -> Self {
        Self::base(OptimizerKind::Signum, beta, beta, 0.0, false)
    }

    pub fn ema_sign(beta: f64) -> Self {
        Self::base(OptimizerKind::EmaSign, beta, beta, 0.0, false)
    }

    pub fn rms_prop(beta2: f64) -> Self {
        Self::base(OptimizerKind::RmsProp, 0.0, beta2, 1e-8, true)
    }

    pub fn adam(beta1: f64, beta2: f64) -> Self {
        Self::base(OptimizerKind::Adam, beta1, beta2, 1e-8, true)
    }

    pub fn adam_equal_beta(beta: f64) -> Self {
        Self::base(OptimizerKind::AdamEqualBeta, beta, beta, 1e-8, true)
    }

    /// Default configuration for `kind` with momentum parameter `beta`.
    pub fn for_kind(kind: OptimizerKind, beta: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(beta),
            OptimizerKind::SignSgd => Self::sign_sgd(),
            OptimizerKind::Signum => Self::signum(beta),
            OptimizerKind::EmaSign => Self::ema_sign(beta),
            OptimizerKind::RmsProp => Self::rms_prop(beta),
            OptimizerKind::Adam => Self::adam(beta, beta),
            OptimizerKind::AdamEqualBeta => Self::adam_equal_beta(beta),
        }
    }

    /// Pure filter settings: no epsilon, zero init, no bias correction.
    pub fn raw(mut self) -> Self {
        self.epsilon = 0.0;
        self.init_mode = InitMode::ZeroInit;
        self.bias_correction = false;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64, placement: EpsilonPlacement) -> Self {
        self.epsilon = epsilon;
        self.epsilon_placement = placement;
        self
    }

    pub fn with_init_mode(mut self, init_mode: InitMode) -> Self {
        self.init_mode = init_mode;
        self
    }

    pub fn with_bias_correction(mut self, on: bool) -> Self {
        self.bias_correction = on;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn with_clip(mut self, clip: ClipConfig) -> Self {
        self.clip = clip;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |msg: String| Error::Config(msg);
        check_beta(self.beta1).map_err(|e| config_err(format!("beta1: {e}")))?;
        check_beta(self.beta2).map_err(|e| config_err(format!("beta2: {e}")))?;
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(config_err(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(config_err(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        self.clip
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        match self.kind {
            OptimizerKind::AdamEqualBeta if self.beta1 != self.beta2 => Err(config_err(format!(
                "adam_equal_beta requires beta1 == beta2, got {} and {}",
                self.beta1, self.beta2
            ))),
            OptimizerKind::RmsProp if self.beta1 != 0.0 => Err(config_err(format!(
                "rms_prop requires beta1 == 0, got {}",
                self.beta1
            ))),
            kind if kind != OptimizerKind::Sgd && self.clip.cclip_bound.is_some() => Err(
                config_err(format!("cclip is only defined for sgd, not {kind}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short identifier used in run records and CSV output.
    pub fn label(&self) -> String {
        let mut s = self.kind.name().to_string();
        match self.kind {
            OptimizerKind::SignSgd => {}
            OptimizerKind::Adam => s.push_str(&format!("(b1={},b2={})", self.beta1, self.beta2)),
            OptimizerKind::RmsProp => s.push_str(&format!("(b2={})", self.beta2)),
            _ => s.push_str(&format!("(b={})", self.beta1)),
        }
        if self.kind == OptimizerKind::Signum && self.epsilon > 0.0 {
            let place = match self.epsilon_placement {
                EpsilonPlacement::OutsideSqrt => "out",
                EpsilonPlacement::InsideSqrt => "in",
            };
            s.push_str(&format!("[eps={:e},{place}]", self.epsilon));
        }
        s
    }
}

/// Mutable buffers of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: EmaBuffer,
    v: EmaBuffer,
    delta: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            m: EmaBuffer::new(dim, config.beta1, config.init_mode)?,
            v: EmaBuffer::new(dim, config.beta2, config.init_mode)?,
            delta: vec![0.0; dim],
            step: 0,
        })
    }

    /// First-moment buffer.
    pub fn m(&self) -> &EmaBuffer {
        &self.m
    }

    /// Second-moment buffer (RmsProp / Adam).
    pub fn v(&self) -> &EmaBuffer {
        &self.v
    }

    /// Variance term of the equal-beta form.
    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn dim(&self) -> usize {
        self.delta.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateTrace {
    /// Step direction before learning-rate scaling.
    pub direction: Vec<f64>,
    /// Variance term after the update; empty for optimizers without one.
    pub delta_snapshot: Vec<f64>,
    /// l2 norm of the raw (unclipped) gradient.
    pub grad_norm: f64,
}

/// `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `num / denom` with the `0 / 0 := 0` convention.
fn safe_div(num: f64, denom: f64) -> f64 {
    if denom == 0.0 {
        0.0
    } else {
        num / denom
    }
}

fn normalize(num: f64, sq: f64, eps: f64, placement: EpsilonPlacement) -> f64 {
    let denom = match placement {
        EpsilonPlacement::OutsideSqrt => sq.sqrt() + eps,
        EpsilonPlacement::InsideSqrt => (sq + eps).sqrt(),
    };
    safe_div(num, denom)
}

/// Consumes one gradient, advances `state` exactly once and returns the step
/// direction. On error the state is left untouched.
pub fn direction(
    config: &OptimizerConfig,
    state: &mut OptimizerState,
    g: &[f64],
) -> Result<UpdateTrace> {
    config.validate()?;
    check_dim(state.dim(), g.len())?;
    check_finite(g)?;
    let grad_norm = l2_norm(g);

    let mut g = g.to_vec();
    if let (Some(t), true) = (
        config.clip.gclip_threshold,
        config.kind != OptimizerKind::EmaSign,
    ) {
        gclip_in_place(&mut g, t);
    }
    state.step += 1;
    let k = state.step;
    let eps = config.epsilon;
    let place = config.epsilon_placement;

    let mut delta_snapshot = Vec::new();
    let direction = match config.kind {
        OptimizerKind::Sgd => {
            state.m.update(&g)?;
            match config.clip.cclip_bound {
                Some(b) => cclip(state.m.value(), b),
                None => state.m.value().to_vec(),
            }
        }
        OptimizerKind::SignSgd => g.iter().map(|&x| sign(x)).collect(),
        OptimizerKind::Signum => {
            state.m.update(&g)?;
            if eps == 0.0 {
                state.m.value().iter().map(|&x| sign(x)).collect()
            } else {
                let c = if config.bias_correction {
                    bias_factor(config.beta1, k)
                } else {
                    1.0
                };
                state
                    .m
                    .value()
                    .iter()
                    .map(|&m| {
                        let m = m / c;
                        normalize(m, m * m, eps, place)
                    })
                    .collect()
            }
        }
        OptimizerKind::EmaSign => {
            state.m.update_with(|i| sign(g[i]));
            state.m.value().to_vec()
        }
        OptimizerKind::RmsProp => {
            state.v.update_with(|i| g[i] * g[i]);
            let c2 = if config.bias_correction {
                bias_factor(config.beta2, k)
            } else {
                1.0
            };
            g.iter()
                .zip(state.v.value())
                .map(|(&gi, &v)| normalize(gi, v / c2, eps, place))
                .collect()
        }
        OptimizerKind::Adam => {
            state.m.update(&g)?;
            state.v.update_with(|i| g[i] * g[i]);
            let (c1, c2) = if config.bias_correction {
                (bias_factor(config.beta1, k), bias_factor(config.beta2, k))
            } else {
                (1.0, 1.0)
            };
            let mut d = Vec::with_capacity(g.len());
            delta_snapshot.reserve(g.len());
            for (&m, &v) in state.m.value().iter().zip(state.v.value()) {
                let (mh, vh) = (m / c1, v / c2);
                d.push(normalize(mh, vh, eps, place));
                delta_snapshot.push((vh - mh * mh).max(0.0));
            }
            d
        }
        OptimizerKind::AdamEqualBeta => {
            let beta = config.beta1;
            let first_seed = k == 1 && config.init_mode == InitMode::FirstSampleInit;
            if !first_seed {
                for ((delta, &m_prev), &gi) in state.delta.iter_mut().zip(state.m.value()).zip(&g) {
                    let dev = m_prev - gi;
                    *delta = beta * *delta + beta * (1.0 - beta) * dev * dev;
                }
            }
            state.m.update(&g)?;
            let c = if config.bias_correction {
                bias_factor(beta, k)
            } else {
                1.0
            };
            delta_snapshot = state.delta.clone();
            state
                .m
                .value()
                .iter()
                .zip(&state.delta)
                .map(|(&m, &delta)| {
                    let mh = m / c;
                    let dh = if c == 1.0 {
                        delta
                    } else {
                        (delta / c - m * m * (1.0 - c) / (c * c)).max(0.0)
                    };
                    normalize(mh, mh * mh + dh, eps, place)
                })
                .collect()
        }
    };

    Ok(UpdateTrace {
        direction,
        delta_snapshot,
        grad_norm,
    })
}

/// `w - lr * weight_decay * w - lr * d`.
pub fn apply_step(w: &[f64], d: &[f64], lr: f64, weight_decay: f64) -> Result<Vec<f64>> {
    let mut out = w.to_vec();
    apply_step_in_place(&mut out, d, lr, weight_decay)?;
    Ok(out)
}

pub fn apply_step_in_place(w: &mut [f64], d: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
    check_dim(w.len(), d.len())?;
    for (wi, &di) in w.iter_mut().zip(d) {
        *wi = *wi - lr * weight_decay * *wi - lr * di;
    }
    Ok(())
}

/// Config plus state, for driving a parameter vector directly.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, dim: usize) -> Result<Self> {
        let state = OptimizerState::new(&config, dim)?;
        Ok(Self { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(&mut self, w: &mut [f64], g: &[f64], lr: f64) -> Result<UpdateTrace> {
        check_dim(w.len(), g.len())?;
        let trace = direction(&self.config, &mut self.state, g)?;
        apply_step_in_place(w, &trace.direction, lr, self.config.weight_decay)?;
        Ok(trace)
    }
}
