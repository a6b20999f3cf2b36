//! Generative samplers: exponential-integrator steps of the probability-flow
//! ODE and of the reverse jump-diffusion SDE, started from the stationary law.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::SampleBatch;
use crate::error::{Error, Result};
use crate::levy_noise::{sample_increment_into, sample_stationary_into, Sign};
use crate::score_model::ScoreNetParams;
use crate::special_math::RngStream;

/// Trajectories advanced together through one batched score evaluation.
const CHUNK: usize = 256;

/// Anything that can evaluate a generalized score on a batch of states
/// sharing one time.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score_batch(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>>;
}

impl ScoreModel for ScoreNetParams {
    fn dim(&self) -> usize {
        ScoreNetParams::dim(self)
    }

    fn score_batch(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        self.forward_batch(xs, &vec![t; xs.nrows()])
    }
}

/// A score given pointwise by a function `f(x, t, out)`.
pub struct PointwiseScore<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> ScoreModel for PointwiseScore<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score_batch(&self, xs: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
        let mut out = Array2::zeros(xs.dim());
        for (x, mut o) in xs.rows().into_iter().zip(out.rows_mut()) {
            (self.f)(&x.to_vec(), t, o.as_slice_mut().expect("standard layout"));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Ode,
    Sde,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Sde, Mode::Ode];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Ode => "ode",
            Mode::Sde => "sde",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ode" => Ok(Mode::Ode),
            "sde" => Ok(Mode::Sde),
            _ => Err(Error::param("mode", format!("expected `ode` or `sde`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub samples: SampleBatch,
    pub mode: Mode,
    pub n_steps: usize,
    pub seed: u64,
}

/// Descriptive sidecar written next to a samples file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub mode: Mode,
    pub n_steps: usize,
    pub seed: u64,
    pub n_samples: usize,
    pub cfg_fingerprint: String,
}

impl GenerationResult {
    /// Writes the samples as CSV and the metadata sidecar as JSON.
    pub fn write(&self, csv_path: &Path, sidecar_path: &Path, fingerprint: u64) -> Result<()> {
        self.samples.write_csv(csv_path)?;
        let meta = SampleMetadata {
            mode: self.mode,
            n_steps: self.n_steps,
            seed: self.seed,
            n_samples: self.samples.len(),
            cfg_fingerprint: format!("{fingerprint:016x}"),
        };
        let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        std::fs::write(sidecar_path, text).map_err(|e| Error::io(sidecar_path, e))
    }
}

/// `x <- x e^{dt/2} + 2 (e^{dt/2} - 1) s`.
pub fn ode_step(x: &mut [f64], score: &[f64], dt: f64) {
    let growth = (0.5 * dt).exp();
    let coef = 2.0 * (0.5 * dt).exp_m1();
    for (xi, si) in x.iter_mut().zip(score) {
        *xi = *xi * growth + coef * si;
    }
}

/// `x <- x e^{dt/2} + 4 (e^{dt/2} - 1) s + gauss + jump`.
pub fn sde_step(x: &mut [f64], score: &[f64], dt: f64, gauss: &[f64], jump: &[f64]) {
    let growth = (0.5 * dt).exp();
    let coef = 4.0 * (0.5 * dt).exp_m1();
    for (((xi, si), g), j) in x.iter_mut().zip(score).zip(gauss).zip(jump) {
        *xi = *xi * growth + coef * si + g + j;
    }
}

/// Score-query time at step `i`: `T - i dt` clamped to `[t_min, T]`.
pub fn score_time(cfg: &ModelConfig, step: usize) -> f64 {
    (cfg.horizon - step as f64 * cfg.dt).clamp(cfg.t_min, cfg.horizon)
}

fn sample_stream(seed: u64, index: usize) -> RngStream {
    RngStream::derive(seed, index as u64)
}

/// Stationary starting points; sample `i` uses stream `i` of `seed`.
pub fn initial_states(cfg: &ModelConfig, n_samples: usize, seed: u64) -> SampleBatch {
    let mut x = Array2::zeros((n_samples, cfg.dim));
    for (i, mut row) in x.rows_mut().into_iter().enumerate() {
        let mut rng = sample_stream(seed, i);
        sample_stationary_into(cfg, &mut rng, row.as_slice_mut().expect("standard layout"));
    }
    SampleBatch::new(x)
}

/// Draws `n_samples` points with either sampler.
///
/// Sample `i` draws its starting point and all of its noise from its own
/// stream, so results are identical for any thread count.
pub fn generate<M: ScoreModel + ?Sized>(
    model: &M,
    cfg: &ModelConfig,
    mode: Mode,
    n_samples: usize,
    seed: u64,
) -> Result<GenerationResult> {
    cfg.validate()?;
    if model.dim() != cfg.dim {
        return Err(Error::Shape(format!("score model dimension {} but d = {}", model.dim(), cfg.dim)));
    }
    if n_samples == 0 {
        return Err(Error::param("n", "need at least one sample"));
    }
    let n_steps = cfg.n_steps();
    let chunks: Vec<Array2<f64>> = (0..n_samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_samples);
            run_chunk(model, cfg, mode, lo..hi, seed)
        })
        .collect::<Result<_>>()?;
    let views: Vec<_> = chunks.iter().map(|a| a.view()).collect();
    let samples = ndarray::concatenate(ndarray::Axis(0), &views).expect("chunks share a width");
    Ok(GenerationResult { samples: SampleBatch::new(samples), mode, n_steps, seed })
}

fn run_chunk<M: ScoreModel + ?Sized>(
    model: &M,
    cfg: &ModelConfig,
    mode: Mode,
    range: std::ops::Range<usize>,
    seed: u64,
) -> Result<Array2<f64>> {
    let d = cfg.dim;
    let mut streams: Vec<RngStream> = range.clone().map(|i| sample_stream(seed, i)).collect();
    let mut x = Array2::zeros((range.len(), d));
    for (rng, mut row) in streams.iter_mut().zip(x.rows_mut()) {
        sample_stationary_into(cfg, rng, row.as_slice_mut().expect("standard layout"));
    }
    let mut gauss = vec![0.0; d];
    let mut jump = vec![0.0; d];
    for step in 0..cfg.n_steps() {
        let t = score_time(cfg, step);
        assert!(t >= cfg.t_min && t <= cfg.horizon, "score time {t} escaped [t_min, T]");
        let s = model.score_batch(x.view(), t)?;
        for (i, (mut row, s_row)) in x.rows_mut().into_iter().zip(s.rows()).enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            let s_row = s_row.as_slice().expect("standard layout");
            match mode {
                Mode::Ode => ode_step(row, s_row, cfg.dt),
                Mode::Sde => {
                    sample_increment_into(cfg.dt, Sign::Plus, cfg, &mut streams[i], &mut gauss, &mut jump)?;
                    sde_step(row, s_row, cfg.dt, &gauss, &jump);
                }
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteState { mode: mode.as_str(), step });
        }
    }
    Ok(x)
}

pub fn ode_sample<M: ScoreModel + ?Sized>(model: &M, cfg: &ModelConfig, n_samples: usize, seed: u64) -> Result<GenerationResult> {
    generate(model, cfg, Mode::Ode, n_samples, seed)
}

pub fn sde_sample<M: ScoreModel + ?Sized>(model: &M, cfg: &ModelConfig, n_samples: usize, seed: u64) -> Result<GenerationResult> {
    generate(model, cfg, Mode::Sde, n_samples, seed)
}
