//! Block-rotated quadratic benchmark.
//!
//! `L(w) = 1/2 w^T H w` with a block-diagonal Hessian. Each block is a
//! random rotation of a fixed list of eigenvalues. The *heterogeneous* layout
//! groups eigenvalues of similar magnitude in each block; the *homogeneous*
//! layout spreads every magnitude across all blocks. Both share the spectrum
//! `{1, 2, 3, 99, 100, 101, 4998, 4999, 5000}`.
//!
//! Stochastic gradients subsample rows of the symmetric square root `X`
//! (`X^T X = H`) without replacement and rescale to stay unbiased.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, ensure, Error, Result};
use crate::exec::Execution;
use crate::optim::{
    apply_step_in_place, direction, OptimizerConfig, OptimizerKind, OptimizerState,
};
use crate::rng::{self, StreamRng};
use crate::schedule::Schedule;
use crate::stats::{median, quantile};

/// Runs whose loss exceeds this (or turns non-finite) are stopped and flagged.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Heterogeneous,
    Homogeneous,
}

impl Layout {
    pub fn short_name(self) -> &'static str {
        match self {
            Layout::Heterogeneous => "het",
            Layout::Homogeneous => "hom",
        }
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Heterogeneous => "heterogeneous",
            Layout::Homogeneous => "homogeneous",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "het" | "heterogeneous" => Ok(Layout::Heterogeneous),
            "hom" | "homogeneous" => Ok(Layout::Homogeneous),
            _ => Err(Error::Config(format!(
                "unknown layout `{s}` (expected het or hom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    /// Eigenvalues of each diagonal block.
    pub blocks: Vec<Vec<f64>>,
    pub layout: Layout,
}

impl BlockSpec {
    pub fn heterogeneous() -> Self {
        Self {
            blocks: vec![
                vec![1.0, 2.0, 3.0],
                vec![99.0, 100.0, 101.0],
                vec![4998.0, 4999.0, 5000.0],
            ],
            layout: Layout::Heterogeneous,
        }
    }

    pub fn homogeneous() -> Self {
        Self {
            blocks: vec![
                vec![1.0, 99.0, 4998.0],
                vec![2.0, 100.0, 4999.0],
                vec![3.0, 101.0, 5000.0],
            ],
            layout: Layout::Homogeneous,
        }
    }

    pub fn for_layout(layout: Layout) -> Self {
        match layout {
            Layout::Heterogeneous => Self::heterogeneous(),
            Layout::Homogeneous => Self::homogeneous(),
        }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn validate(&self) -> Result<()> {
        ensure(!self.blocks.is_empty(), || {
            "block spec has no blocks".into()
        })?;
        for (i, b) in self.blocks.iter().enumerate() {
            ensure(!b.is_empty(), || format!("block {i} is empty"))?;
            ensure(b.iter().all(|&l| l > 0.0 && l.is_finite()), || {
                format!("block {i} has a non-positive eigenvalue")
            })?;
        }
        Ok(())
    }

    /// All eigenvalues in ascending order.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut all: Vec<f64> = self.blocks.iter().flatten().copied().collect();
        all.sort_by(f64::total_cmp);
        all
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    hessian: DMatrix<f64>,
    design: DMatrix<f64>,
    block_rotations: Vec<DMatrix<f64>>,
    blocks: Vec<Range<usize>>,
    layout: Layout,
    seed: u64,
}

impl QuadraticProblem {
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Symmetric square root `X` with `X^T X = H`.
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn block_rotations(&self) -> &[DMatrix<f64>] {
        &self.block_rotations
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        0.5 * w.dot(&(&self.hessian * &w))
    }

    /// `H w`.
    pub fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        (&self.hessian * w).as_slice().to_vec()
    }

    /// `(n / |rows|) * sum_{i in rows} x_i (x_i^T w)`.
    pub fn rows_gradient(&self, w: &[f64], rows: &[usize]) -> Vec<f64> {
        let n = self.dim();
        let scale = n as f64 / rows.len() as f64;
        let mut out = vec![0.0; n];
        for &i in rows {
            let row = self.design.row(i);
            let proj: f64 = row.iter().zip(w).map(|(x, w)| x * w).sum();
            for (o, x) in out.iter_mut().zip(row.iter()) {
                *o += scale * x * proj;
            }
        }
        out
    }
}

/// Orthonormal eigenvectors of `A A^T`, columns ordered by descending
/// eigenvalue and signed so each column's largest-magnitude entry is positive.
pub fn rotation_from_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (q, _) = gram_eigen(a);
    q
}

fn gram_eigen(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let gram = a * a.transpose();
    let eig = gram.symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut q = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        let pivot = col
            .iter()
            .copied()
            .max_by(|x, y| x.abs().total_cmp(&y.abs()))
            .unwrap_or(1.0);
        if pivot < 0.0 {
            col.neg_mut();
        }
        q.set_column(dst, &col);
    }
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    (q, values)
}

/// Random `n x n` rotation from the eigenvectors of `A A^T`, `A` with i.i.d.
/// standard normal entries. Draws with (numerically) repeated eigenvalues are
/// discarded and redrawn from the advanced stream.
pub fn haar_rotation<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    loop {
        let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let (q, values) = gram_eigen(&a);
        let top = values
            .first()
            .copied()
            .unwrap_or(0.0)
            .abs()
            .max(f64::MIN_POSITIVE);
        let separated = values.windows(2).all(|w| w[0] - w[1] > 1e-10 * top);
        if separated {
            return q;
        }
    }
}

pub fn build_problem(spec: &BlockSpec, seed: u64) -> Result<QuadraticProblem> {
    spec.validate()?;
    let n = spec.dim();
    let mut rng = rng::stream(seed, "rotations", 0);
    let mut hessian = DMatrix::zeros(n, n);
    let mut design = DMatrix::zeros(n, n);
    let mut rotations = Vec::with_capacity(spec.blocks.len());
    let mut blocks = Vec::with_capacity(spec.blocks.len());
    let mut offset = 0;
    for eigs in &spec.blocks {
        let k = eigs.len();
        let q = haar_rotation(&mut rng, k);
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(eigs));
        let root =
            DMatrix::from_diagonal(&DVector::from_iterator(k, eigs.iter().map(|l| l.sqrt())));
        let h_block = &q * lam * q.transpose();
        let x_block = &q * root * q.transpose();
        // symmetrize away round-off so H and X are exactly symmetric
        let h_block = (&h_block + h_block.transpose()) * 0.5;
        let x_block = (&x_block + x_block.transpose()) * 0.5;
        hessian
            .view_mut((offset, offset), (k, k))
            .copy_from(&h_block);
        design
            .view_mut((offset, offset), (k, k))
            .copy_from(&x_block);
        rotations.push(q);
        blocks.push(offset..offset + k);
        offset += k;
    }
    Ok(QuadraticProblem {
        hessian,
        design,
        block_rotations: rotations,
        blocks,
        layout: spec.layout,
        seed,
    })
}

/// Unbiased minibatch gradient from `batch_size` rows drawn without replacement.
pub fn stochastic_grad<R: Rng + ?Sized>(
    problem: &QuadraticProblem,
    w: &[f64],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = problem.dim();
    check_dim(n, w.len())?;
    ensure((1..=n).contains(&batch_size), || {
        format!("batch_size must lie in [1, {n}], got {batch_size}")
    })?;
    let mut rows = sample(rng, n, batch_size).into_vec();
    rows.sort_unstable();
    Ok(problem.rows_gradient(w, &rows))
}

/// Average of [`QuadraticProblem::rows_gradient`] over every row subset of
/// size `batch_size`.
pub fn exhaustive_mean_gradient(
    problem: &QuadraticProblem,
    w: &[f64],
    batch_size: usize,
) -> Result<Vec<f64>> {
    let n = problem.dim();
    check_dim(n, w.len())?;
    ensure((1..=n).contains(&batch_size), || {
        format!("batch_size must lie in [1, {n}], got {batch_size}")
    })?;
    let mut acc = vec![0.0; n];
    let mut count = 0usize;
    for rows in (0..n).combinations(batch_size) {
        for (a, g) in acc.iter_mut().zip(problem.rows_gradient(w, &rows)) {
            *a += g;
        }
        count += 1;
    }
    Ok(acc.into_iter().map(|a| a / count as f64).collect())
}

/// Standard normal direction rescaled to norm `radius`.
pub fn initial_point<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return w.into_iter().map(|x| radius * x / norm).collect();
        }
    }
}

/// Default starting point for run `seed`: norm 3, drawn from the `w0` stream.
pub fn default_w0(dim: usize, master_seed: u64, seed: u64) -> Vec<f64> {
    initial_point(&mut rng::stream(master_seed, "w0", seed), dim, 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_id: String,
    pub seed: u64,
    /// `losses[0]` is the initial loss, `losses[k]` the loss after `k` updates.
    pub losses: Vec<f64>,
    /// Per update, mean of the variance term over each block. Empty for
    /// optimizers without a variance estimate.
    pub delta_block_means: Vec<Vec<f64>>,
    pub diverged: bool,
}

impl RunRecord {
    /// Last recorded loss, `+inf` for diverged runs.
    pub fn final_loss(&self) -> f64 {
        if self.diverged {
            f64::INFINITY
        } else {
            self.losses.last().copied().unwrap_or(f64::INFINITY)
        }
    }

    /// Time average of each block's variance-term mean.
    pub fn mean_block_deltas(&self) -> Vec<f64> {
        let Some(first) = self.delta_block_means.first() else {
            return Vec::new();
        };
        let mut acc = vec![0.0; first.len()];
        for row in &self.delta_block_means {
            for (a, d) in acc.iter_mut().zip(row) {
                *a += d;
            }
        }
        let n = self.delta_block_means.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }
}

/// Iterates minibatch gradient -> direction -> decoupled step for `steps`
/// updates, using learning rate `sched.lr_at(k)` for update `k`. Minibatches
/// come from the `batches` stream of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment(
    problem: &QuadraticProblem,
    config: &OptimizerConfig,
    sched: &Schedule,
    steps: u64,
    batch_size: usize,
    w0: &[f64],
    seed: u64,
) -> Result<RunRecord> {
    check_dim(problem.dim(), w0.len())?;
    sched.validate()?;
    ensure(sched.total_steps >= steps, || {
        format!(
            "schedule covers {} steps, run needs {steps}",
            sched.total_steps
        )
    })?;
    let mut rng: StreamRng = rng::stream(seed, "batches", 0);
    let mut state = OptimizerState::new(config, problem.dim())?;
    let mut w = w0.to_vec();
    let tracks = config.kind.tracks_variance();

    let mut record = RunRecord {
        config_id: config.label(),
        seed,
        losses: Vec::with_capacity(steps as usize + 1),
        delta_block_means: Vec::with_capacity(if tracks { steps as usize } else { 0 }),
        diverged: false,
    };
    let initial = problem.loss(&w);
    record.losses.push(initial);
    if !initial.is_finite() || initial > DIVERGENCE_LOSS {
        record.diverged = true;
        return Ok(record);
    }

    for k in 0..steps {
        let lr = sched.lr_at(k)?;
        let g = stochastic_grad(problem, &w, batch_size, &mut rng)?;
        let trace = match direction(config, &mut state, &g) {
            Ok(t) => t,
            Err(Error::NonFinite { .. }) => {
                record.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        apply_step_in_place(&mut w, &trace.direction, lr, config.weight_decay)?;
        if tracks {
            let means = problem
                .blocks()
                .iter()
                .map(|r| trace.delta_snapshot[r.clone()].iter().sum::<f64>() / r.len() as f64)
                .collect();
            record.delta_block_means.push(means);
        }
        let loss = problem.loss(&w);
        record.losses.push(loss);
        if !loss.is_finite() || loss > DIVERGENCE_LOSS {
            record.diverged = true;
            break;
        }
    }
    Ok(record)
}

/// Grid, seeds and schedule shape shared by every tuned optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSpec {
    pub lr_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub floor_lr: f64,
    pub master_seed: u64,
}

impl Default for TuneSpec {
    fn default() -> Self {
        Self {
            lr_grid: power_of_two_grid(-16, 2),
            seeds: (0..10).collect(),
            steps: 1000,
            batch_size: 3,
            warmup_fraction: 0.1,
            floor_lr: 0.0,
            master_seed: 0,
        }
    }
}

impl TuneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure(!self.lr_grid.is_empty(), || {
            "learning-rate grid is empty".into()
        })?;
        ensure(!self.seeds.is_empty(), || "seed list is empty".into())?;
        ensure(self.steps > 0, || "steps must be positive".into())?;
        ensure(
            self.lr_grid.iter().all(|&lr| lr >= 0.0 && lr.is_finite()),
            || "learning rates must be finite and >= 0".into(),
        )
    }

    pub fn schedule(&self, peak_lr: f64) -> Result<Schedule> {
        Schedule::new(
            peak_lr,
            self.floor_lr.min(peak_lr),
            self.steps,
            self.warmup_fraction,
        )
    }
}

/// `2^lo, 2^(lo+1), ..., 2^hi`.
pub fn power_of_two_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|i| 2f64.powi(i)).collect()
}

/// Runs one `(config, lr)` cell over every seed of `spec`.
pub fn run_cell(
    problem: &QuadraticProblem,
    config: &OptimizerConfig,
    lr: f64,
    spec: &TuneSpec,
    seed: u64,
) -> Result<RunRecord> {
    let sched = spec.schedule(lr)?;
    let w0 = default_w0(problem.dim(), spec.master_seed, seed);
    let run_seed = rng::derive_seed(spec.master_seed, "run", seed);
    let mut record = run_experiment(
        problem,
        config,
        &sched,
        spec.steps,
        spec.batch_size,
        &w0,
        run_seed,
    )?;
    record.seed = seed;
    record.config_id = format!(
        "{}/{}/lr={lr:e}",
        problem.layout().short_name(),
        config.label()
    );
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrCell {
    pub lr: f64,
    pub median_final: f64,
    pub q25_final: f64,
    pub q75_final: f64,
    pub diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub config: OptimizerConfig,
    pub label: String,
    /// `None` when every learning rate diverged on the median seed.
    pub best_lr: Option<f64>,
    pub median_final: f64,
    pub q25_final: f64,
    pub q75_final: f64,
    pub cells: Vec<LrCell>,
    /// Runs at the best learning rate, in seed order.
    pub best_runs: Vec<RunRecord>,
}

impl OptimizerSummary {
    pub fn all_diverged(&self) -> bool {
        self.best_lr.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub layout: Layout,
    pub summaries: Vec<OptimizerSummary>,
}

impl Comparison {
    pub fn by_kind(&self, kind: OptimizerKind) -> Option<&OptimizerSummary> {
        self.summaries.iter().find(|s| s.config.kind == kind)
    }
}

/// Tunes each config's learning rate on `spec.lr_grid`, picking the rate with
/// the smallest median final loss (ties go to the smaller rate).
pub fn tune_and_compare(
    problem: &QuadraticProblem,
    configs: &[OptimizerConfig],
    spec: &TuneSpec,
    exec: Execution,
) -> Result<Comparison> {
    spec.validate()?;
    ensure(!configs.is_empty(), || "no optimizers to compare".into())?;
    for c in configs {
        c.validate()?;
    }
    let jobs: Vec<(usize, usize, usize)> = (0..configs.len())
        .flat_map(|c| {
            (0..spec.lr_grid.len()).flat_map(move |l| (0..spec.seeds.len()).map(move |s| (c, l, s)))
        })
        .collect();
    let records = exec
        .map(&jobs, |&(c, l, s)| {
            run_cell(problem, &configs[c], spec.lr_grid[l], spec, spec.seeds[s])
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let per_lr = spec.seeds.len();
    let per_config = spec.lr_grid.len() * per_lr;
    let summaries = configs
        .iter()
        .enumerate()
        .map(|(ci, config)| {
            let block = &records[ci * per_config..(ci + 1) * per_config];
            let cells: Vec<LrCell> = spec
                .lr_grid
                .iter()
                .enumerate()
                .map(|(li, &lr)| {
                    let runs = &block[li * per_lr..(li + 1) * per_lr];
                    let finals: Vec<f64> = runs.iter().map(RunRecord::final_loss).collect();
                    LrCell {
                        lr,
                        median_final: median(&finals).unwrap_or(f64::INFINITY),
                        q25_final: quantile(&finals, 0.25).unwrap_or(f64::INFINITY),
                        q75_final: quantile(&finals, 0.75).unwrap_or(f64::INFINITY),
                        diverged: runs.iter().filter(|r| r.diverged).count(),
                    }
                })
                .collect();
            let best = cells
                .iter()
                .enumerate()
                .filter(|(_, c)| c.median_final.is_finite())
                .min_by(|a, b| {
                    a.1.median_final
                        .total_cmp(&b.1.median_final)
                        .then(a.0.cmp(&b.0))
                })
                .map(|(i, _)| i);
            let (best_lr, median_final, q25_final, q75_final, best_runs) = match best {
                Some(i) => (
                    Some(cells[i].lr),
                    cells[i].median_final,
                    cells[i].q25_final,
                    cells[i].q75_final,
                    block[i * per_lr..(i + 1) * per_lr].to_vec(),
                ),
                None => (
                    None,
                    f64::INFINITY,
                    f64::INFINITY,
                    f64::INFINITY,
                    Vec::new(),
                ),
            };
            OptimizerSummary {
                config: *config,
                label: config.label(),
                best_lr,
                median_final,
                q25_final,
                q75_final,
                cells,
                best_runs,
            }
        })
        .collect();
    Ok(Comparison {
        layout: problem.layout(),
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonAblation {
    /// One tuned summary per `(epsilon, placement)`, epsilon-major.
    pub mollified: Vec<OptimizerSummary>,
    pub reference: OptimizerSummary,
}

impl EpsilonAblation {
    /// Mollified variant with the smallest tuned median final loss.
    pub fn best_mollified(&self) -> Option<&OptimizerSummary> {
        self.mollified
            .iter()
            .min_by(|a, b| a.median_final.total_cmp(&b.median_final))
    }
}

/// Tunes Signum with a fixed mollifier `m / sqrt(m^2 + eps)` (both epsilon
/// placements) for each epsilon, alongside equal-beta Adam.
pub fn signum_epsilon_ablation(
    problem: &QuadraticProblem,
    epsilons: &[f64],
    beta: f64,
    spec: &TuneSpec,
    exec: Execution,
) -> Result<EpsilonAblation> {
    use crate::optim::EpsilonPlacement::{InsideSqrt, OutsideSqrt};
    ensure(!epsilons.is_empty(), || "epsilon grid is empty".into())?;
    let mut configs: Vec<OptimizerConfig> = epsilons
        .iter()
        .flat_map(|&e| {
            [InsideSqrt, OutsideSqrt]
                .into_iter()
                .map(move |p| OptimizerConfig::signum(beta).with_epsilon(e, p))
        })
        .collect();
    configs.push(OptimizerConfig::adam_equal_beta(beta));
    let mut cmp = tune_and_compare(problem, &configs, spec, exec)?;
    let reference = cmp.summaries.pop().expect("reference config present");
    Ok(EpsilonAblation {
        mollified: cmp.summaries,
        reference,
    })
}
