//! Heavy-tailed benchmark: alpha-stable target data, empirical quantiles, the
//! tail mean-square logarithmic error and the multi-run experiment.

pub mod diagnostics;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::SampleBatch;
use crate::error::{Error, Result};
use crate::generation::{generate, Mode};
use crate::kernels::KernelTable;
use crate::levy_noise::sample_alpha_stable_isotropic;
use crate::score_model::ScoreNetParams;
use crate::special_math::{derive_seed, RngStream};
use crate::training::train;

/// Points of the midpoint rule for the tail integral.
pub const MSLE_GRID: usize = 200;
/// Smallest sample accepted by [`msle`].
pub const MSLE_MIN_SAMPLES: usize = 1000;

/// Seed labels for the sub-tasks of one experiment.
const TRAIN_DATA: u64 = 1;
const HELD_OUT: u64 = 2;
const GENERATION: u64 = 3;
const RETRAIN: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stability index of the target law.
    pub alpha: f64,
    pub n_runs: usize,
    /// Generated (and held-out target) samples per run.
    pub n_gen: usize,
    /// Lower end of the quantile range in the metric.
    pub xi: f64,
    pub seed: u64,
    /// Train a fresh network for every run instead of once.
    pub retrain_per_run: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self { alpha: 1.7, n_runs: 20, n_gen: 25_000, xi: 0.95, seed: 0, retrain_per_run: false }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::param("alpha", format!("must lie in (0, 2], got {}", self.alpha)));
        }
        if self.n_runs == 0 {
            return Err(Error::param("n_runs", "must be positive"));
        }
        if self.n_gen < MSLE_MIN_SAMPLES {
            return Err(Error::param("n_gen", format!("need at least {MSLE_MIN_SAMPLES} samples")));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::param("xi", format!("must lie in (0, 1), got {}", self.xi)));
        }
        Ok(())
    }
}

/// Quantile of ascending `sorted` at level `p`, interpolating linearly
/// between the order statistics around position `p (n - 1)`.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::param("samples", "must not be empty"));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::param("p", format!("must lie in (0, 1), got {p}")));
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

fn sorted_copy(values: &[f64]) -> Result<Vec<f64>> {
    if !values.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("sample passed to the metric".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

fn msle_one(data: &[f64], gen: &[f64], xi: f64, component: usize) -> Result<f64> {
    if !(xi > 0.0 && xi < 1.0) {
        return Err(Error::param("xi", format!("must lie in (0, 1), got {xi}")));
    }
    let n = data.len().min(gen.len());
    if n < MSLE_MIN_SAMPLES {
        return Err(Error::param("samples", format!("need at least {MSLE_MIN_SAMPLES}, got {n}")));
    }
    let data = sorted_copy(data)?;
    let gen = sorted_copy(gen)?;
    let p_max = 1.0 - 1.0 / n as f64;
    if p_max <= xi {
        return Err(Error::param("xi", format!("{xi} leaves no tail below p_max = {p_max}")));
    }
    let width = (p_max - xi) / MSLE_GRID as f64;
    let mut sum = 0.0;
    for i in 0..MSLE_GRID {
        let p = xi + (i as f64 + 0.5) * width;
        let a = empirical_quantile(&data, p)?;
        let b = empirical_quantile(&gen, p)?;
        for value in [a, b] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveQuantile { component, p, value });
            }
        }
        sum += (a.ln() - b.ln()).powi(2);
    }
    Ok(sum * width)
}

/// Tail mean-square logarithmic error between two one-dimensional samples:
/// the midpoint rule for `int_xi^{p_max} (log F_data^{-1} - log F_gen^{-1})^2 dp`
/// with `p_max = 1 - 1 / min(n_data, n_gen)`.
pub fn msle(data: &[f64], gen: &[f64], xi: f64) -> Result<f64> {
    msle_one(data, gen, xi, 0)
}

/// Per-component MSLE values of two point clouds.
pub fn msle_components(data: &SampleBatch, gen: &SampleBatch, xi: f64) -> Result<Vec<f64>> {
    if data.dim() != gen.dim() {
        return Err(Error::Shape(format!("dimensions {} and {}", data.dim(), gen.dim())));
    }
    (0..data.dim()).map(|c| msle_one(&data.component(c), &gen.component(c), xi, c)).collect()
}

/// Component-averaged MSLE.
pub fn msle_mean(data: &SampleBatch, gen: &SampleBatch, xi: f64) -> Result<f64> {
    let parts = msle_components(data, gen, xi)?;
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}

/// `n` isotropic alpha-stable points; point `i` uses stream `i` of `seed`.
pub fn make_target_dataset(alpha: f64, d: usize, n: usize, seed: u64) -> Result<SampleBatch> {
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| sample_alpha_stable_isotropic(alpha, d, &mut RngStream::derive(seed, i as u64)))
        .collect::<Result<_>>()?;
    let mut points = Array2::zeros((n, d));
    for (mut row, r) in points.rows_mut().into_iter().zip(&rows) {
        row.assign(&ndarray::ArrayView1::from(r));
    }
    Ok(SampleBatch::new(points))
}

/// Training data of an experiment (run `run` when networks are re-trained).
pub fn training_dataset(cfg: &RunConfig, run: Option<usize>) -> Result<SampleBatch> {
    let base = derive_seed(cfg.experiment.seed, TRAIN_DATA);
    let seed = match run {
        Some(r) => derive_seed(base, r as u64),
        None => base,
    };
    make_target_dataset(cfg.experiment.alpha, cfg.model.dim, cfg.train.n_train, seed)
}

/// Metric of one run of one sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub run: usize,
    pub msle: f64,
}

/// Aggregate over runs for one sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub msle_mean: f64,
    /// Sample standard deviation over runs divided by `sqrt(n_runs)`;
    /// absent for a single run.
    pub msle_stderr: Option<f64>,
    pub runs: Vec<f64>,
    pub n_runs: usize,
    pub n_gen: usize,
    pub seed: u64,
    pub config: RunConfig,
}

impl MetricsReport {
    pub fn from_runs(mode: Mode, runs: Vec<f64>, cfg: &RunConfig) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::param("runs", "no completed runs"));
        }
        let n = runs.len() as f64;
        let mean = runs.iter().sum::<f64>() / n;
        let stderr = (runs.len() > 1).then(|| {
            let var = runs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Ok(Self {
            mode,
            msle_mean: mean,
            msle_stderr: stderr,
            n_runs: runs.len(),
            runs,
            n_gen: cfg.experiment.n_gen,
            seed: cfg.experiment.seed,
            config: cfg.clone(),
        })
    }
}

/// Held-out target sample of run `run`.
pub fn held_out_dataset(cfg: &RunConfig, run: usize) -> Result<SampleBatch> {
    let seed = derive_seed(derive_seed(cfg.experiment.seed, HELD_OUT), run as u64);
    make_target_dataset(cfg.experiment.alpha, cfg.model.dim, cfg.experiment.n_gen, seed)
}

/// Generation seed of run `run`.
pub fn generation_seed(cfg: &RunConfig, run: usize) -> u64 {
    derive_seed(derive_seed(cfg.experiment.seed, GENERATION), run as u64)
}

/// Generates and scores one run of one sampler.
pub fn evaluate_run(cfg: &RunConfig, params: &ScoreNetParams, mode: Mode, run: usize) -> Result<RunRecord> {
    let generated = generate(params, &cfg.model, mode, cfg.experiment.n_gen, generation_seed(cfg, run))?;
    let target = held_out_dataset(cfg, run)?;
    let msle = msle_mean(&target, &generated.samples, cfg.experiment.xi)?;
    Ok(RunRecord { mode, run, msle })
}

/// Runs the benchmark for each mode.
///
/// `trained` is the network shared by all runs; with `retrain_per_run` (or
/// when no network is given and per-run training is on) each run trains its
/// own. Runs already listed in `done` are skipped and reused; `on_run` sees
/// each new record as soon as it exists so callers can persist partial
/// results.
pub fn run_experiment(
    cfg: &RunConfig,
    table: &KernelTable,
    trained: Option<&ScoreNetParams>,
    modes: &[Mode],
    done: &[RunRecord],
    on_run: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let exp = &cfg.experiment;
    let mut shared = None;
    if !exp.retrain_per_run {
        shared = match trained {
            Some(p) => Some(p.clone()),
            None => {
                let data = training_dataset(cfg, None)?;
                Some(train(&data, &cfg.model, &cfg.train, table, &mut |_, _| {})?.0)
            }
        };
    }
    let mut records: Vec<RunRecord> = done.to_vec();
    for run in 0..exp.n_runs {
        let pending: Vec<Mode> =
            modes.iter().copied().filter(|&m| !records.iter().any(|r| r.mode == m && r.run == run)).collect();
        if pending.is_empty() {
            continue;
        }
        let own;
        let params = match &shared {
            Some(p) => p,
            None => {
                let data = training_dataset(cfg, Some(run))?;
                let mut tcfg = cfg.train.clone();
                tcfg.seed = derive_seed(derive_seed(cfg.train.seed, RETRAIN), run as u64);
                own = train(&data, &cfg.model, &tcfg, table, &mut |_, _| {})?.0;
                &own
            }
        };
        for mode in pending {
            let record = evaluate_run(cfg, params, mode, run)?;
            on_run(&record)?;
            records.push(record);
        }
    }
    modes
        .iter()
        .map(|&mode| {
            let mut runs: Vec<(usize, f64)> =
                records.iter().filter(|r| r.mode == mode && r.run < exp.n_runs).map(|r| (r.run, r.msle)).collect();
            runs.sort_by_key(|r| r.0);
            MetricsReport::from_runs(mode, runs.into_iter().map(|r| r.1).collect(), cfg)
        })
        .collect()
}
