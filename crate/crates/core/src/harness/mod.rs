//! Experiment orchestration: repeated federated runs per hyperparameter
//! point, grid search, and the mapping from a target budget back to a
//! configuration.

mod config;
mod frontier;

use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::accountant::{AlphaGrid, DpPoint};
use crate::data::{
    impute_zeros, select_features, stratified_split, DataError, ExpressionMatrix, GeneSignature,
    SplitSpec,
};
use crate::dp_sgd::{DpSgdConfig, DpSgdError};
use crate::federated::{client_budget, run_cyclic_fl, FederatedError, FlConfig};
use crate::models::{accuracy, evaluate, ArchKind, ArchitectureSpec, ModelError};

pub use config::{parse_grid_config, GridConfig, GRID_KEYS};
pub use frontier::{
    emit_plot_data, pareto_frontier, read_frontier, read_frontier_file, write_frontier,
    write_frontier_file, write_plot_data, FrontierRecord, PlotRow, DEFAULT_PLOT_EPSILONS,
    FRONTIER_COLUMNS,
};

/// Per-client `delta` values attached to every grid point.
pub const DEFAULT_DELTAS: [f64; 3] = [1e-5, 1e-4, 1e-3];
/// Seeds per grid point unless configured otherwise.
pub const DEFAULT_N_SEEDS: u32 = 50;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),
    #[error("unknown signature `{0}`")]
    UnknownSignature(String),
    #[error("n_seeds must be at least 1")]
    NoSeeds,
    #[error("hyperparameter grid is empty")]
    EmptyGrid,
    #[error("no delta values configured")]
    NoDeltas,
    #[error("target must have epsilon > 0 and 0 < delta < 1, got ({epsilon}, {delta})")]
    InvalidTarget { epsilon: f64, delta: f64 },
    #[error("no configuration satisfies epsilon <= {epsilon} and delta <= {delta}")]
    NoFeasibleConfiguration { epsilon: f64, delta: f64 },
    #[error("realized budget {realized} exceeds target ({epsilon}, {delta})")]
    BudgetExceeded {
        realized: DpPoint,
        epsilon: f64,
        delta: f64,
    },
    #[error("{} of {n_seeds} seeds failed; first: seed {}: {}", failures.len(), failures[0].0, failures[0].1)]
    SeedFailures {
        n_seeds: u32,
        failures: Vec<(u64, String)>,
    },
    #[error("frontier line {line}: {message}")]
    FrontierParse { line: u64, message: String },
    #[error("grid config line {line}: {message}")]
    GridConfig { line: usize, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federated(#[from] FederatedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One point of the hyperparameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    pub signature: String,
    pub arch: ArchKind,
    pub q: f64,
    pub eta: f64,
    pub sigma: f64,
    pub clip_c: f64,
    pub n_rounds: u32,
    pub local_steps: u32,
}

impl HyperParams {
    pub fn dp_config(&self) -> Result<DpSgdConfig, HarnessError> {
        DpSgdConfig::new(self.q, self.eta, self.sigma, self.clip_c)
            .map_err(|e: DpSgdError| HarnessError::InvalidHyperParams(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.dp_config()?;
        if self.n_rounds == 0 || self.local_steps == 0 {
            return Err(HarnessError::InvalidHyperParams(
                "n_rounds and local_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn fl_config(&self, input_dim: usize, seed: u64) -> Result<FlConfig, HarnessError> {
        self.validate()?;
        Ok(FlConfig {
            n_rounds: self.n_rounds,
            local_steps: self.local_steps,
            dp: self.dp_config()?,
            arch: ArchitectureSpec::new(self.arch, input_dim)?,
            master_seed: seed,
        })
    }

    /// Per-client budget at `delta`; depends only on `q`, `sigma` and `N * E`.
    pub fn budget(&self, delta: f64, grid: &AlphaGrid) -> Result<DpPoint, HarnessError> {
        let steps = u64::from(self.n_rounds) * u64::from(self.local_steps);
        Ok(client_budget(&self.dp_config()?, steps, delta, grid)?.0)
    }
}

/// A target `(epsilon_t, delta_t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetTarget {
    epsilon: f64,
    delta: f64,
}

impl BudgetTarget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, HarnessError> {
        if !(epsilon > 0.0) || !(delta > 0.0 && delta < 1.0) {
            return Err(HarnessError::InvalidTarget { epsilon, delta });
        }
        Ok(Self { epsilon, delta })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Coordinatewise comparison.
    pub fn admits(&self, epsilon: f64, delta: f64) -> bool {
        epsilon <= self.epsilon && delta <= self.delta
    }
}

/// An expression matrix together with the public signatures that
/// hyperparameter points may refer to by name.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub matrix: ExpressionMatrix,
    pub signatures: Vec<GeneSignature>,
}

impl ExperimentData {
    pub fn signature(&self, name: &str) -> Result<&GeneSignature, HarnessError> {
        self.signatures
            .iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| HarnessError::UnknownSignature(name.to_string()))
    }
}

/// Run settings shared by every grid point.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub n_seeds: u32,
    pub base_seed: u64,
    pub deltas: Vec<f64>,
    pub alpha_grid: AlphaGrid,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            n_seeds: DEFAULT_N_SEEDS,
            base_seed: 0,
            deltas: DEFAULT_DELTAS.to_vec(),
            alpha_grid: AlphaGrid::default(),
        }
    }
}

/// Validation accuracy of one seed: 40/40/20 stratified split, signature
/// selection and zero imputation on each part, cyclic training, evaluation.
pub fn run_seed(
    hp: &HyperParams,
    data: &ExperimentData,
    seed: u64,
    delta: f64,
    alpha_grid: &AlphaGrid,
) -> Result<f64, HarnessError> {
    let sig = data.signature(&hp.signature)?;
    let parts = stratified_split(&data.matrix, &SplitSpec::federated(seed))?;
    let selected = parts
        .iter()
        .map(|p| Ok(impute_zeros(&select_features(p, sig)?)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let input_dim = selected[0].n_genes();
    let prepared = selected
        .iter()
        .map(|m| Ok(m.to_samples()?))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let cfg = hp.fl_config(input_dim, seed)?;
    let run = run_cyclic_fl(&cfg, &prepared[0], &prepared[1], delta, alpha_grid)?;
    Ok(accuracy(&evaluate(&run.params, &prepared[2])?)?)
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn seeds(n_seeds: u32, base_seed: u64) -> impl Iterator<Item = u64> {
    (0..u64::from(n_seeds)).map(move |i| base_seed.wrapping_add(i))
}

fn summarize(
    n_seeds: u32,
    results: Vec<(u64, Result<f64, HarnessError>)>,
) -> Result<(f64, f64), HarnessError> {
    let mut accs = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(a) => accs.push(a),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(HarnessError::SeedFailures { n_seeds, failures });
    }
    Ok(mean_std(&accs))
}

fn record(hp: &HyperParams, budget: DpPoint, mean: f64, std: f64, n_seeds: u32) -> FrontierRecord {
    FrontierRecord {
        signature: hp.signature.clone(),
        arch: hp.arch,
        q: hp.q,
        eta: hp.eta,
        sigma: hp.sigma,
        clip_c: hp.clip_c,
        n_rounds: hp.n_rounds,
        local_steps: hp.local_steps,
        epsilon: budget.epsilon,
        delta: budget.delta,
        mean_accuracy: mean,
        std_accuracy: std,
        n_seeds,
    }
}

/// `n_seeds` independent runs with seeds `base_seed, base_seed + 1, ...`,
/// summarized with the per-client budget at `delta`. Fails if any seed fails.
pub fn repeat_runs(
    hp: &HyperParams,
    data: &ExperimentData,
    n_seeds: u32,
    base_seed: u64,
    delta: f64,
    alpha_grid: &AlphaGrid,
) -> Result<FrontierRecord, HarnessError> {
    if n_seeds == 0 {
        return Err(HarnessError::NoSeeds);
    }
    hp.validate()?;
    let budget = hp.budget(delta, alpha_grid)?;
    let seeds: Vec<u64> = seeds(n_seeds, base_seed).collect();
    let results = seeds
        .par_iter()
        .map(|&s| (s, run_seed(hp, data, s, delta, alpha_grid)))
        .collect();
    let (mean, std) = summarize(n_seeds, results)?;
    Ok(record(hp, budget, mean, std, n_seeds))
}

/// A grid point that could not be evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub index: usize,
    pub hyper_params: HyperParams,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    /// One record per successful point and delta, sorted by `(delta, epsilon)`.
    pub records: Vec<FrontierRecord>,
    pub failures: Vec<PointFailure>,
}

/// Sorts by `(delta, epsilon)`; equal keys keep their relative order.
pub fn sort_records(records: &mut [FrontierRecord]) {
    records.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.epsilon.total_cmp(&b.epsilon)));
}

/// Evaluates every point on `n_seeds` seeds in parallel and writes the
/// sorted records as CSV to `out_path` (or nowhere when `None`).
pub fn grid_search(
    grid: &[HyperParams],
    data: &ExperimentData,
    settings: &RunSettings,
    out_path: Option<&Path>,
) -> Result<GridReport, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    if settings.n_seeds == 0 {
        return Err(HarnessError::NoSeeds);
    }
    if settings.deltas.is_empty() {
        return Err(HarnessError::NoDeltas);
    }
    // Fail on an unwritable destination before any training happens.
    let out = out_path.map(fs::File::create).transpose()?;

    let jobs: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|p| seeds(settings.n_seeds, settings.base_seed).map(move |s| (p, s)))
        .collect();
    let mut outcomes: Vec<Result<f64, HarnessError>> = jobs
        .par_iter()
        .map(|&(p, s)| {
            grid[p].validate()?;
            run_seed(&grid[p], data, s, settings.deltas[0], &settings.alpha_grid)
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let per_point = settings.n_seeds as usize;
    for (index, hp) in grid.iter().enumerate() {
        let results: Vec<(u64, Result<f64, HarnessError>)> = jobs[index * per_point..(index + 1) * per_point]
            .iter()
            .map(|&(_, s)| s)
            .zip(outcomes.drain(..per_point))
            .collect();
        let evaluated = summarize(settings.n_seeds, results).and_then(|(mean, std)| {
            settings
                .deltas
                .iter()
                .map(|&d| Ok(record(hp, hp.budget(d, &settings.alpha_grid)?, mean, std, settings.n_seeds)))
                .collect::<Result<Vec<_>, HarnessError>>()
        });
        match evaluated {
            Ok(rs) => records.extend(rs),
            Err(e) => failures.push(PointFailure {
                index,
                hyper_params: hp.clone(),
                message: e.to_string(),
            }),
        }
    }
    sort_records(&mut records);
    if let Some(file) = out {
        write_frontier(&records, io::BufWriter::new(file))?;
    }
    Ok(GridReport { records, failures })
}

/// The feasible record (coordinatewise `epsilon <= epsilon_t`,
/// `delta <= delta_t`) with the lexicographically largest `(delta, epsilon)`.
/// Ties go to the higher mean accuracy, then to the earlier record.
pub fn select_params<'a>(
    records: &'a [FrontierRecord],
    target: &BudgetTarget,
) -> Result<&'a FrontierRecord, HarnessError> {
    let mut best: Option<&FrontierRecord> = None;
    for r in records.iter().filter(|r| target.admits(r.epsilon, r.delta)) {
        let better = match best {
            None => true,
            Some(b) => r
                .delta
                .total_cmp(&b.delta)
                .then(r.epsilon.total_cmp(&b.epsilon))
                .then(r.mean_accuracy.total_cmp(&b.mean_accuracy))
                .is_gt(),
        };
        if better {
            best = Some(r);
        }
    }
    let chosen = best.ok_or(HarnessError::NoFeasibleConfiguration {
        epsilon: target.epsilon,
        delta: target.delta,
    })?;
    debug_assert!(target.admits(chosen.epsilon, chosen.delta));
    Ok(chosen)
}

/// Outcome of training from a target budget.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetRun {
    /// Frontier row the configuration was taken from.
    pub selected: FrontierRecord,
    /// Fresh runs of that configuration.
    pub rerun: FrontierRecord,
    pub realized: DpPoint,
    pub hyper_params: HyperParams,
}

/// Prunes `records` to their accuracy frontier, selects a configuration
/// for `target`, and trains it again on `settings.n_seeds` seeds. Errors
/// if the realized budget exceeds the target in either coordinate.
pub fn run_from_records(
    target: &BudgetTarget,
    records: &[FrontierRecord],
    data: &ExperimentData,
    settings: &RunSettings,
) -> Result<BudgetRun, HarnessError> {
    let frontier = pareto_frontier(records);
    let selected = select_params(&frontier, target)?.clone();
    let hp = selected.hyper_params();
    let rerun = repeat_runs(
        &hp,
        data,
        settings.n_seeds,
        settings.base_seed,
        selected.delta,
        &settings.alpha_grid,
    )?;
    let realized = DpPoint {
        epsilon: rerun.epsilon,
        delta: rerun.delta,
    };
    if !target.admits(realized.epsilon, realized.delta) {
        return Err(HarnessError::BudgetExceeded {
            realized,
            epsilon: target.epsilon,
            delta: target.delta,
        });
    }
    Ok(BudgetRun {
        selected,
        rerun,
        realized,
        hyper_params: hp,
    })
}

pub fn run_from_budget(
    target: &BudgetTarget,
    frontier_path: &Path,
    data: &ExperimentData,
    settings: &RunSettings,
) -> Result<BudgetRun, HarnessError> {
    let records = read_frontier_file(frontier_path)?;
    run_from_records(target, &records, data, settings)
}
