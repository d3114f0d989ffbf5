//! Experiment configuration. Stored as TOML with a `schema_version` field;
//! every section is optional and falls back to its defaults.

use std::path::Path;

use adamlab::ema::beta_grid;
use adamlab::quadbench::{power_of_two_grid, Layout, TuneSpec};
use adamlab::signal::{Filter, FilterKind, SignalSpec};
use adamlab::{InitMode, OptimizerConfig, OptimizerKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Master seed for every random stream.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub quad: QuadConfig,
    #[serde(default)]
    pub signal: SignalConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            verify: VerifyConfig::default(),
            quad: QuadConfig::default(),
            signal: SignalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub betas: Vec<f64>,
    pub prop1_sequences: u64,
    pub prop1_length: usize,
    pub direction_tol: f64,
    pub variance_tol: f64,
    pub beta_base: f64,
    pub kappas: Vec<f64>,
    pub vi_instances: u64,
    pub vi_candidates: usize,
    pub objective_tol: f64,
    pub parameter_tol: f64,
    pub signal_trials: usize,
    pub signal_length: usize,
    pub signal_tol: f64,
    pub decay_tol: f64,
    pub trust_sequences: u64,
    pub trust_tol: f64,
    pub grad_points: u64,
    pub grad_batch_size: usize,
    pub grad_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            betas: vec![0.8, 0.9, 0.95, 0.975, 0.9875],
            prop1_sequences: 50,
            prop1_length: 1000,
            direction_tol: 1e-9,
            variance_tol: 1e-10,
            beta_base: 0.9,
            kappas: power_of_two_grid(-5, 2),
            vi_instances: 100,
            vi_candidates: 10_000,
            objective_tol: 1e-8,
            parameter_tol: 1e-4,
            signal_trials: 100,
            signal_length: 256,
            signal_tol: 1e-12,
            decay_tol: 0.05,
            trust_sequences: 20,
            trust_tol: 1e-12,
            grad_points: 20,
            grad_batch_size: 3,
            grad_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadConfig {
    pub layouts: Vec<Layout>,
    pub optimizers: Vec<OptimizerConfig>,
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub floor_lr: f64,
    /// Seed for the block rotations.
    pub problem_seed: u64,
    /// Fixed-epsilon Signum variants tuned against equal-beta Adam. Empty skips
    /// the ablation.
    pub ablation_epsilons: Vec<f64>,
}

impl Default for QuadConfig {
    fn default() -> Self {
        let beta = 0.95;
        Self {
            layouts: vec![Layout::Heterogeneous, Layout::Homogeneous],
            optimizers: vec![
                OptimizerConfig::sgd(beta),
                OptimizerConfig::signum(beta),
                OptimizerConfig::adam_equal_beta(beta),
            ],
            lr_grid: power_of_two_grid(-16, 2),
            seeds: (0..10).collect(),
            steps: 1000,
            batch_size: 3,
            warmup_fraction: 0.1,
            floor_lr: 0.0,
            problem_seed: 0,
            ablation_epsilons: vec![1e-9, 1e-6, 1e-3],
        }
    }
}

impl QuadConfig {
    pub fn tune_spec(&self, master_seed: u64) -> TuneSpec {
        TuneSpec {
            lr_grid: self.lr_grid.clone(),
            seeds: self.seeds.clone(),
            steps: self.steps,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            floor_lr: self.floor_lr,
            master_seed,
        }
    }

    /// Momentum shared by the ablation variants: the equal-beta Adam entry if
    /// present, else 0.95.
    pub fn ablation_beta(&self) -> f64 {
        self.optimizers
            .iter()
            .find(|c| c.kind == OptimizerKind::AdamEqualBeta)
            .map_or(0.95, |c| c.beta1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalConfig {
    pub filters: Vec<FilterKind>,
    pub beta: f64,
    pub init_mode: InitMode,
    pub amplitude: f64,
    pub frequency: f64,
    pub decay: f64,
    pub length: usize,
    pub property_trials: usize,
    pub property_length: usize,
    pub tolerance: f64,
    pub decay_tolerance: f64,
}

impl Default for SignalConfig {
    fn default() -> Self {
        let spec = SignalSpec::default();
        Self {
            filters: FilterKind::ALL.to_vec(),
            beta: 0.95,
            init_mode: InitMode::ZeroInit,
            amplitude: spec.amplitude,
            frequency: spec.frequency,
            decay: spec.decay,
            length: spec.length,
            property_trials: 100,
            property_length: 256,
            tolerance: 1e-12,
            decay_tolerance: 0.05,
        }
    }
}

impl SignalConfig {
    pub fn spec(&self) -> SignalSpec {
        SignalSpec {
            amplitude: self.amplitude,
            frequency: self.frequency,
            decay: self.decay,
            length: self.length,
        }
    }

    pub fn filter(&self, kind: FilterKind) -> Result<Filter> {
        Ok(Filter::new(kind, self.beta)?.with_init_mode(self.init_mode))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub layout: Layout,
    pub optimizers: Vec<OptimizerKind>,
    pub lr_grid: Vec<f64>,
    pub beta_base: f64,
    pub kappas: Vec<f64>,
    /// Restrict Adam's `(beta1, beta2)` grid to its diagonal.
    pub equal_betas: bool,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub floor_lr: f64,
    pub problem_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            layout: Layout::Heterogeneous,
            optimizers: vec![OptimizerKind::Signum, OptimizerKind::Adam],
            lr_grid: power_of_two_grid(-12, -2),
            beta_base: 0.9,
            kappas: power_of_two_grid(-5, 2),
            equal_betas: false,
            seeds: (0..3).collect(),
            steps: 500,
            batch_size: 3,
            warmup_fraction: 0.1,
            floor_lr: 0.0,
            problem_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn betas(&self) -> Result<Vec<f64>> {
        Ok(beta_grid(self.beta_base, &self.kappas)?)
    }

    pub fn tune_spec(&self, master_seed: u64) -> TuneSpec {
        TuneSpec {
            lr_grid: self.lr_grid.clone(),
            seeds: self.seeds.clone(),
            steps: self.steps,
            batch_size: self.batch_size,
            warmup_fraction: self.warmup_fraction,
            floor_lr: self.floor_lr,
            master_seed,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let seeds = std::iter::once(&self.seed)
            .chain(&self.quad.seeds)
            .chain(&self.sweep.seeds)
            .chain([&self.quad.problem_seed, &self.sweep.problem_seed]);
        for &s in seeds {
            if i64::try_from(s).is_err() {
                return Err(CliError::Config(format!("seed {s} exceeds {}", i64::MAX)));
            }
        }
        for c in &self.quad.optimizers {
            c.validate()?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
