//! Denoising score matching against the tabulated conditional score.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::dataset::SampleBatch;
use crate::error::{Error, Result};
use crate::kernels::KernelTable;
use crate::levy_noise::{sample_increment_into, Sign};
use crate::score_model::{loss_and_grad, optimizer_step, OptimizerConfig, OptimizerState, ScoreNetParams, DEFAULT_HIDDEN};
use crate::special_math::{derive_seed, sample_uniform, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Training-set size.
    pub n_train: usize,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub seed: u64,
    /// Hidden-layer widths of the score network.
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_train: 32_000,
            batch_size: 256,
            n_epochs: 100,
            seed: 0,
            hidden: DEFAULT_HIDDEN.to_vec(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::param("n_train", "must be positive"));
        }
        if self.batch_size == 0 || self.batch_size > self.n_train {
            return Err(Error::param("batch_size", format!("must lie in 1..={}", self.n_train)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::param("hidden", "need at least one non-empty hidden layer"));
        }
        self.optimizer.validate()
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_loss.last().copied()
    }
}

/// Exact draw of the forward state `y0 e^{-t/2} + gauss + jump` at time `t`.
pub fn sample_forward_state<R: Rng + ?Sized>(y0: &[f64], t: f64, cfg: &ModelConfig, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; y0.len()];
    let mut jump = vec![0.0; y0.len()];
    forward_state_into(y0, t, cfg, rng, &mut out, &mut jump)?;
    Ok(out)
}

fn forward_state_into<R: Rng + ?Sized>(
    y0: &[f64],
    t: f64,
    cfg: &ModelConfig,
    rng: &mut R,
    out: &mut [f64],
    scratch: &mut [f64],
) -> Result<()> {
    sample_increment_into(t, Sign::Minus, cfg, rng, out, scratch)?;
    let shrink = (-0.5 * t).exp();
    for ((o, j), y) in out.iter_mut().zip(scratch.iter()).zip(y0) {
        *o += j + y * shrink;
    }
    Ok(())
}

/// Noisy states, their times and conditional-score targets for a minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmBatch {
    pub states: Array2<f64>,
    pub times: Vec<f64>,
    pub targets: Array2<f64>,
}

impl DsmBatch {
    /// Targets for given clean points, noisy states and times.
    pub fn from_states(
        y0: ArrayView2<'_, f64>,
        states: Array2<f64>,
        times: Vec<f64>,
        table: &KernelTable,
    ) -> Result<Self> {
        if y0.dim() != states.dim() || times.len() != states.nrows() {
            return Err(Error::Shape("clean points, states and times disagree in size".into()));
        }
        let mut targets = Array2::zeros(states.dim());
        for (i, mut row) in targets.rows_mut().into_iter().enumerate() {
            let y = states.row(i);
            let y0 = y0.row(i);
            table.conditional_score_into(
                y.as_slice().expect("standard layout"),
                &y0.to_vec(),
                times[i],
                row.as_slice_mut().expect("standard layout"),
            )?;
        }
        Ok(Self { states, times, targets })
    }
}

/// Draws `t ~ U[t_min, T]` and the forward state for every clean point.
/// Each example gets its own stream seeded from `rng`, so the result does not
/// depend on how the work is split across threads.
pub fn build_dsm_batch<R: RngCore + ?Sized>(
    y0: ArrayView2<'_, f64>,
    table: &KernelTable,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<DsmBatch> {
    let (n, d) = y0.dim();
    if n == 0 {
        return Err(Error::Shape("empty minibatch".into()));
    }
    if d != cfg.dim {
        return Err(Error::Shape(format!("points have dimension {d}, configuration {}", cfg.dim)));
    }
    let seeds: Vec<u64> = (0..n).map(|_| rng.next_u64()).collect();
    let rows: Vec<(f64, Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let mut stream = RngStream::new(seed);
            let t = sample_uniform(cfg.t_min, cfg.horizon, &mut stream);
            let clean = y0.row(i).to_vec();
            let mut state = vec![0.0; d];
            let mut scratch = vec![0.0; d];
            forward_state_into(&clean, t, cfg, &mut stream, &mut state, &mut scratch)?;
            let mut target = vec![0.0; d];
            table.conditional_score_into(&state, &clean, t, &mut target)?;
            Ok((t, state, target))
        })
        .collect::<Result<_>>()?;
    let mut states = Array2::zeros((n, d));
    let mut targets = Array2::zeros((n, d));
    let mut times = Vec::with_capacity(n);
    for (i, (t, s, g)) in rows.into_iter().enumerate() {
        times.push(t);
        states.row_mut(i).assign(&ndarray::ArrayView1::from(&s));
        targets.row_mut(i).assign(&ndarray::ArrayView1::from(&g));
    }
    Ok(DsmBatch { states, times, targets })
}

/// Loss and gradient on a prepared minibatch.
pub fn dsm_loss(params: &ScoreNetParams, batch: &DsmBatch) -> Result<(f64, ScoreNetParams)> {
    loss_and_grad(params, batch.states.view(), &batch.times, batch.targets.view())
}

/// Monte Carlo denoising score-matching loss on one minibatch of clean
/// points, with its gradient.
pub fn dsm_minibatch<R: RngCore + ?Sized>(
    params: &ScoreNetParams,
    batch_y0: &SampleBatch,
    table: &KernelTable,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<(f64, ScoreNetParams)> {
    let batch = build_dsm_batch(batch_y0.view(), table, cfg, rng)?;
    dsm_loss(params, &batch)
}

/// Trains a fresh network. `on_epoch` sees the epoch index and mean loss.
pub fn train(
    dataset: &SampleBatch,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    table: &KernelTable,
    on_epoch: &mut dyn FnMut(usize, f64),
) -> Result<(ScoreNetParams, TrainHistory)> {
    tcfg.validate()?;
    if dataset.len() != tcfg.n_train {
        return Err(Error::param(
            "n_train",
            format!("dataset has {} samples, configuration expects {}", dataset.len(), tcfg.n_train),
        ));
    }
    if dataset.dim() != cfg.dim {
        return Err(Error::Shape(format!("dataset dimension {} but d = {}", dataset.dim(), cfg.dim)));
    }
    let mut params = ScoreNetParams::init(cfg, &tcfg.hidden, derive_seed(tcfg.seed, 0))?;
    let mut state = OptimizerState::new(params.len(), tcfg.optimizer.clone());
    let mut shuffle_rng = RngStream::derive(tcfg.seed, 1);
    let mut draw_rng = RngStream::derive(tcfg.seed, 2);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let points = dataset.view();

    for epoch in 0..tcfg.n_epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(tcfg.batch_size).enumerate() {
            let y0 = points.select(ndarray::Axis(0), idx);
            let batch = build_dsm_batch(y0.view(), table, cfg, &mut draw_rng)?;
            let (loss, grads) = dsm_loss(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            optimizer_step(&mut params, &grads, &mut state)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / dataset.len() as f64;
        history.epoch_loss.push(mean);
        history.epoch_seconds.push(start.elapsed().as_secs_f64());
        on_epoch(epoch, mean);
    }
    Ok((params, history))
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::evaluation::diagnostics::{empirical_cf, ks_two_sample, planar_wavevector};
    use crate::evaluation::make_target_dataset;
    use crate::kernels::{g1_hat, tabulate};
    use crate::score_model::ScoreNetParams;
    use crate::special_math::sample_normal_vec;

    fn default_table() -> &'static KernelTable {
        static TABLE: OnceLock<KernelTable> = OnceLock::new();
        TABLE.get_or_init(|| tabulate(&ModelConfig::default()).unwrap())
    }

    fn gaussian_cfg() -> ModelConfig {
        ModelConfig { jump_rate: 0.0, ..Default::default() }
    }

    fn gaussian_data(n: usize, seed: u64) -> SampleBatch {
        let mut rng = RngStream::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| sample_normal_vec(2, 1.0, &mut rng).unwrap()).collect();
        SampleBatch::from_rows(&rows).unwrap()
    }

    #[test]
    fn forward_state_near_zero_time() {
        let mut rng = RngStream::new(1);
        let y0 = [1.5, -0.5];
        for _ in 0..100 {
            let y = sample_forward_state(&y0, 1e-9, &ModelConfig::default(), &mut rng).unwrap();
            assert!((y[0] - y0[0]).abs() < 1e-4 && (y[1] - y0[1]).abs() < 1e-4);
        }
        assert!(sample_forward_state(&y0, 0.0, &ModelConfig::default(), &mut rng).is_err());
    }

    #[test]
    fn forward_state_gaussian_moments() {
        let cfg = gaussian_cfg();
        let mut rng = RngStream::new(2);
        let y0 = [2.0, -1.0];
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_forward_state(&y0, 1.0, &cfg, &mut rng).unwrap()).collect();
        let var = 1.0 - (-1.0f64).exp();
        for c in 0..2 {
            let mean = draws.iter().map(|y| y[c]).sum::<f64>() / n as f64;
            let want = y0[c] * (-0.5f64).exp();
            assert!((mean - want).abs() < 3.0 * (var / n as f64).sqrt());
            let v = draws.iter().map(|y| (y[c] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((v - var).abs() / var < 0.02);
        }
    }

    #[test]
    fn forward_state_characteristic_function() {
        let cfg = ModelConfig::default();
        let mut rng = RngStream::new(3);
        let y0 = [0.7, 0.2];
        let shrink = (-5.0f64).exp();
        let centered: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                let y = sample_forward_state(&y0, 10.0, &cfg, &mut rng).unwrap();
                vec![y[0] - y0[0] * shrink, y[1] - y0[1] * shrink]
            })
            .collect();
        for k in [0.5, 1.0, 2.0] {
            let est = empirical_cf(centered.iter().map(|v| v.as_slice()), &planar_wavevector(k, 1.1, 2));
            let want = g1_hat(k, 10.0, &cfg);
            assert!((est.value - want).abs() <= 3.0 * est.std_err, "k={k}: {est:?} vs {want}");
        }
    }

    #[test]
    fn forward_sampling_is_markov_consistent() {
        let cfg = ModelConfig::default();
        let (mut a, mut b) = (RngStream::new(4), RngStream::new(5));
        let y0 = [1.0, 1.0];
        let n = 100_000;
        let direct: Vec<Vec<f64>> = (0..n).map(|_| sample_forward_state(&y0, 5.0, &cfg, &mut a).unwrap()).collect();
        let composed: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let half = sample_forward_state(&y0, 2.5, &cfg, &mut b).unwrap();
                sample_forward_state(&half, 2.5, &cfg, &mut b).unwrap()
            })
            .collect();
        for c in 0..2 {
            let x: Vec<f64> = direct.iter().map(|v| v[c]).collect();
            let y: Vec<f64> = composed.iter().map(|v| v[c]).collect();
            let (_, p) = ks_two_sample(&x, &y);
            assert!(p > 1e-3, "component {c}: p = {p}");
        }
    }

    #[test]
    fn targets_stay_finite_on_heavy_tailed_data() {
        let cfg = ModelConfig::default();
        let table = default_table();
        let data = make_target_dataset(1.7, 2, 32_000, 6).unwrap();
        let mut rng = RngStream::new(7);
        let mut checked = 0;
        while checked < 1_000_000 {
            let idx: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..data.len())).collect();
            let y0 = data.view().select(ndarray::Axis(0), &idx);
            let batch = build_dsm_batch(y0.view(), table, &cfg, &mut rng).unwrap();
            assert!(batch.targets.iter().all(|v| v.is_finite()));
            checked += idx.len();
        }
    }

    #[test]
    fn zero_targets_reduce_to_network_norm() {
        let cfg = ModelConfig::default();
        let table = default_table();
        let params = ScoreNetParams::init(&cfg, &[16, 16], 8).unwrap();
        let y0 = Array2::zeros((6, 2));
        let times = vec![0.05, 0.5, 1.0, 2.0, 5.0, 10.0];
        let batch = DsmBatch::from_states(y0.view(), Array2::zeros((6, 2)), times.clone(), table).unwrap();
        assert!(batch.targets.iter().all(|&v| v == 0.0));
        let (loss, _) = dsm_loss(&params, &batch).unwrap();
        let out = params.forward_batch(batch.states.view(), &times).unwrap();
        let norm = out.iter().map(|v| v * v).sum::<f64>() / 6.0;
        assert!((loss - norm).abs() <= 1e-14 * norm);
    }

    #[test]
    fn minibatch_gradient_with_frozen_draws() {
        let cfg = ModelConfig::default();
        let table = default_table();
        let data = make_target_dataset(1.7, 2, 8, 9).unwrap();
        let mut p = ScoreNetParams::init(&cfg, &[7, 6], 10).unwrap();
        let frozen = build_dsm_batch(data.view(), table, &cfg, &mut RngStream::new(11)).unwrap();
        let (loss, grads) = dsm_minibatch(&p, &data, table, &cfg, &mut RngStream::new(11)).unwrap();
        assert!(loss >= 0.0);
        assert_eq!(grads, dsm_loss(&p, &frozen).unwrap().1);
        let h = 1e-5;
        for i in 0..p.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let up = dsm_loss(&p, &frozen).unwrap().0;
            p.as_mut_slice()[i] = orig - h;
            let down = dsm_loss(&p, &frozen).unwrap().0;
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads.as_slice()[i];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-6), "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn zero_epochs_return_initial_parameters() {
        let cfg = ModelConfig::default();
        let tcfg = TrainConfig { n_train: 64, batch_size: 16, n_epochs: 0, hidden: vec![8], ..Default::default() };
        let data = gaussian_data(64, 12);
        let (params, history) = train(&data, &cfg, &tcfg, default_table(), &mut |_, _| {}).unwrap();
        assert_eq!(params, ScoreNetParams::init(&cfg, &[8], derive_seed(0, 0)).unwrap());
        assert!(history.epoch_loss.is_empty() && history.final_loss().is_none());
    }

    #[test]
    fn training_is_deterministic_and_reduces_the_loss() {
        let cfg = ModelConfig::default();
        let tcfg = TrainConfig { n_train: 4096, n_epochs: 6, hidden: vec![64, 64], seed: 3, ..Default::default() };
        let data = make_target_dataset(1.7, 2, 4096, 13).unwrap();
        let mut seen = Vec::new();
        let (pa, ha) = train(&data, &cfg, &tcfg, default_table(), &mut |e, l| seen.push((e, l))).unwrap();
        let (pb, hb) = train(&data, &cfg, &tcfg, default_table(), &mut |_, _| {}).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(ha.epoch_loss, hb.epoch_loss);
        assert_eq!(ha.epoch_loss.len(), 6);
        assert_eq!(ha.epoch_seconds.len(), 6);
        assert_eq!(seen.len(), 6);
        assert!(ha.final_loss().unwrap() < ha.epoch_loss[0]);
    }

    #[test]
    fn train_rejects_wrong_dataset_size() {
        let cfg = ModelConfig::default();
        let tcfg = TrainConfig { n_train: 100, batch_size: 10, hidden: vec![4], ..Default::default() };
        let data = gaussian_data(50, 14);
        assert!(train(&data, &cfg, &tcfg, default_table(), &mut |_, _| {}).is_err());
    }

    #[test]
    fn gaussian_smoke_test_learns_the_marginal_score() {
        let cfg = gaussian_cfg();
        let table = tabulate(&cfg).unwrap();
        let tcfg = TrainConfig { n_epochs: 50, seed: 15, ..Default::default() };
        let data = gaussian_data(tcfg.n_train, 16);
        let (params, _) = train(&data, &cfg, &tcfg, &table, &mut |_, _| {}).unwrap();
        // Unit-variance data stays unit-variance: the score is -x / 2.
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..20 {
            for j in 0..20 {
                let x = [-3.0 + 6.0 * i as f64 / 19.0, -3.0 + 6.0 * j as f64 / 19.0];
                let s = params.forward(&x, 5.0).unwrap();
                for c in 0..2 {
                    err += (s[c] + 0.5 * x[c]).powi(2);
                    norm += (0.5 * x[c]).powi(2);
                }
            }
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 0.15, "relative L2 error {rel}");
    }
}
