//! Optimizer laboratory: Adam and its sign-based relatives, the mean/variance
//! form of equal-beta Adam, its online variational-inference reading,
//! heterogeneous quadratic benchmarks and a filter view of update rules.

pub mod clip;
pub mod ema;
pub mod equiv;
pub mod error;
pub mod exec;
pub mod optim;
pub mod quadbench;
pub mod rng;
pub mod schedule;
pub mod signal;
pub mod stats;
pub mod vi;

pub use clip::{cclip, gclip, ClipConfig};
pub use ema::{beta_grid, bias_correct, ema_update, EmaBuffer, InitMode};
pub use error::{Error, Result};
pub use exec::Execution;
pub use optim::{
    apply_step, direction, EpsilonPlacement, Optimizer, OptimizerConfig, OptimizerKind,
    OptimizerState, UpdateTrace,
};
pub use schedule::{lr_at, Schedule};
