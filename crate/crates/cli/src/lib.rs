//! Command-line harness for `adamlab`.
//!
//! Subcommands: `verify` runs the numeric identity suites and prints a JSON
//! report; `quad` tunes optimizers on the block quadratics; `signal` writes
//! filter responses and property checks; `sweep` runs an
//! optimizer x learning-rate x beta grid. All commands read an optional TOML
//! config (`--config`) and write CSV under `--out`.

pub mod cmd;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use adamlab::quadbench::Layout;
use adamlab::signal::FilterKind;
use adamlab::{Execution, InitMode, OptimizerConfig, OptimizerKind};
use clap::{Args, Parser, Subcommand};

pub use cmd::quad::cmd_quad;
pub use cmd::signal::cmd_signal;
pub use cmd::sweep::cmd_sweep;
pub use cmd::verify::{cmd_verify, Suite, VerifyReport};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "adamlab",
    version,
    about = "Optimizer identities, quadratic benchmarks and filter traces"
)]
pub struct Cli {
    /// TOML experiment config; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (verify writes verify.json there only when given).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true, value_name = "N", env = "ADAMLAB_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run verification suites and print a JSON report.
    Verify {
        #[arg(long, value_enum, default_value = "all", value_name = "NAME")]
        suite: Suite,
    },
    /// Tune optimizers on the block-rotated quadratics.
    Quad(QuadArgs),
    /// Filter responses to the damped sine and property checks.
    Signal(SignalArgs),
    /// Optimizer x learning rate x beta sweep.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct QuadArgs {
    #[arg(long, value_name = "het|hom")]
    pub layout: Option<Layout>,
    /// Run a single optimizer (momentum 0.95 unless --beta is given).
    #[arg(long, value_name = "NAME")]
    pub optim: Option<OptimizerKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Single learning rate instead of the tuning grid.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<u64>,
    /// Skip the fixed-epsilon Signum ablation.
    #[arg(long)]
    pub no_ablation: bool,
}

#[derive(Debug, Args)]
pub struct SignalArgs {
    #[arg(long, value_name = "NAME")]
    pub filter: Option<FilterKind>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub decay: Option<f64>,
    #[arg(long)]
    pub first_sample_init: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_name = "het|hom")]
    pub layout: Option<Layout>,
    /// Only sweep Adam on the beta1 == beta2 diagonal.
    #[arg(long)]
    pub equal_betas: bool,
    /// Comma-separated learning rates replacing the configured grid.
    #[arg(long, value_delimiter = ',', value_name = "LR,...")]
    pub lr: Option<Vec<f64>>,
}

/// Loads the config file (or defaults) and applies command-line overrides.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match &cli.command {
        Command::Verify { .. } => {}
        Command::Quad(a) => {
            let q = &mut config.quad;
            if let Some(layout) = a.layout {
                q.layouts = vec![layout];
            }
            if let Some(kind) = a.optim {
                q.optimizers = vec![OptimizerConfig::for_kind(kind, a.beta.unwrap_or(0.95))];
            } else if let Some(beta) = a.beta {
                for c in &mut q.optimizers {
                    *c = OptimizerConfig::for_kind(c.kind, beta);
                }
            }
            if let Some(lr) = a.lr {
                q.lr_grid = vec![lr];
            }
            if let Some(steps) = a.steps {
                q.steps = steps;
            }
            if a.no_ablation {
                q.ablation_epsilons.clear();
            }
        }
        Command::Signal(a) => {
            let s = &mut config.signal;
            if let Some(filter) = a.filter {
                s.filters = vec![filter];
            }
            if let Some(beta) = a.beta {
                s.beta = beta;
            }
            if let Some(decay) = a.decay {
                s.decay = decay;
            }
            if a.first_sample_init {
                s.init_mode = InitMode::FirstSampleInit;
            }
        }
        Command::Sweep(a) => {
            let s = &mut config.sweep;
            if let Some(layout) = a.layout {
                s.layout = layout;
            }
            if a.equal_betas {
                s.equal_betas = true;
            }
            if let Some(lr) = &a.lr {
                s.lr_grid = lr.clone();
            }
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn execution(jobs: Option<usize>) -> Result<Execution> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        _ => Ok(Execution::default()),
    }
}

/// Runs `f` inside a worker pool of `jobs` threads when that is meaningful.
#[cfg(feature = "parallel")]
fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T: Send>(_jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Executes the parsed command, writing human-facing output to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let config = resolve_config(cli)?;
    let exec = execution(cli.jobs)?;
    with_pool(cli.jobs, || run_command(cli, &config, exec))?
}

fn run_command(cli: &Cli, config: &ExperimentConfig, exec: Execution) -> Result<()> {
    match &cli.command {
        Command::Verify { suite } => {
            let report = cmd_verify(config, *suite, exec)?;
            let json = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Config(e.to_string()))?;
            println!("{json}");
            if let Some(dir) = &cli.out {
                output::ensure_dir(dir)?;
                output::write_json(&dir.join("verify.json"), &report)?;
            }
            match report.failures() {
                0 => Ok(()),
                n => Err(CliError::CheckFailed(n)),
            }
        }
        Command::Quad(_) => {
            let out = cmd_quad(config, &out_dir(cli), exec)?;
            for cmp in &out.comparisons {
                for s in &cmp.summaries {
                    println!(
                        "{:<14} {:<32} best_lr={:<12} median_final={:.6e}",
                        cmp.layout.to_string(),
                        s.label,
                        s.best_lr
                            .map_or("diverged".to_string(), |lr| format!("{lr:e}")),
                        s.median_final
                    );
                }
            }
            print_files(&out.files);
            Ok(())
        }
        Command::Signal(_) => {
            let out = cmd_signal(config, &out_dir(cli), exec)?;
            for r in &out.properties {
                println!(
                    "{:<28} properties {}",
                    r.label,
                    if r.passed() { "pass" } else { "FAIL" }
                );
            }
            for r in &out.decay {
                println!(
                    "{:<28} decay gap {:.3e} (tol {})",
                    r.label, r.max_gap, r.tolerance
                );
            }
            print_files(&out.files);
            Ok(())
        }
        Command::Sweep(_) => {
            let out = cmd_sweep(config, &out_dir(cli), exec)?;
            let failed: usize = out.cells.iter().map(|c| c.failed).sum();
            println!("{} cells, {failed} failed runs", out.cells.len());
            print_files(std::slice::from_ref(&out.file));
            Ok(())
        }
    }
}

fn print_files(files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
}
