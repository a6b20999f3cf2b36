//! The generalized-score network `s_theta(x, t)`: a tanh MLP on the input
//! `(x, t / T)` with a linear output, exact reverse-mode gradients and an
//! Adam optimizer working on the flat parameter vector.

use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::special_math::{tanh_in_place, RngStream};

/// Hidden widths used when none are configured.
pub const DEFAULT_HIDDEN: [usize; 4] = [200; 4];

const MAGIC: &[u8; 4] = b"JDLW";
const FORMAT_VERSION: u32 = 1;

/// Weights and biases of every layer in one contiguous vector.
///
/// Layer `l` maps `cols` inputs to `rows` outputs; its weight matrix is stored
/// row-major and followed by its bias vector. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNetParams {
    dim: usize,
    horizon: f64,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl ScoreNetParams {
    /// All-zero parameters for input dimension `dim` and the given hidden
    /// widths.
    pub fn zeros(dim: usize, hidden: &[usize], horizon: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("d", "must be at least 1"));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::param("hidden", "need at least one non-empty hidden layer"));
        }
        if !(horizon > 0.0) {
            return Err(Error::param("T", format!("must be positive, got {horizon}")));
        }
        let mut widths = vec![dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(dim);
        let shapes: Vec<(usize, usize)> = widths.windows(2).map(|w| (w[1], w[0])).collect();
        Ok(Self::from_shapes(dim, horizon, shapes))
    }

    fn from_shapes(dim: usize, horizon: f64, shapes: Vec<(usize, usize)>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len() + 1);
        let mut total = 0;
        for &(r, c) in &shapes {
            offsets.push(total);
            total += r * c + r;
        }
        offsets.push(total);
        Self { dim, horizon, shapes, offsets, values: vec![0.0; total] }
    }

    /// Fan-in scaled Gaussian weights (variance `1 / fan_in`), zero biases.
    pub fn init(cfg: &ModelConfig, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(cfg.dim, hidden, cfg.horizon)?;
        let mut rng = RngStream::new(seed);
        for l in 0..params.n_layers() {
            let scale = (1.0 / params.shapes[l].1 as f64).sqrt();
            for w in params.weight_mut(l).iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = scale * z;
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    /// `(rows, cols)` of each weight matrix.
    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.shapes[..self.shapes.len() - 1].iter().map(|s| s.0).collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn weight(&self, l: usize) -> ArrayView2<'_, f64> {
        let (r, c) = self.shapes[l];
        let start = self.offsets[l];
        ArrayView2::from_shape((r, c), &self.values[start..start + r * c]).expect("layer shape")
    }

    pub fn weight_mut(&mut self, l: usize) -> ArrayViewMut2<'_, f64> {
        let (r, c) = self.shapes[l];
        let start = self.offsets[l];
        ArrayViewMut2::from_shape((r, c), &mut self.values[start..start + r * c]).expect("layer shape")
    }

    pub fn bias(&self, l: usize) -> ArrayView1<'_, f64> {
        let (r, c) = self.shapes[l];
        let start = self.offsets[l] + r * c;
        ArrayView1::from(&self.values[start..start + r])
    }

    pub fn bias_mut(&mut self, l: usize) -> ArrayViewMut1<'_, f64> {
        let (r, c) = self.shapes[l];
        let start = self.offsets[l] + r * c;
        ArrayViewMut1::from(&mut self.values[start..start + r])
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn same_layout(&self, other: &Self) -> bool {
        self.dim == other.dim && self.shapes == other.shapes
    }

    /// Network input rows `(x, t / T)`.
    fn assemble(&self, xs: ArrayView2<'_, f64>, times: &[f64]) -> Result<Array2<f64>> {
        let (n, d) = xs.dim();
        if d != self.dim || times.len() != n {
            return Err(Error::Shape(format!(
                "expected {} times and {} columns, got {} points of dimension {d} and {} times",
                n,
                self.dim,
                n,
                times.len()
            )));
        }
        let mut input = Array2::zeros((n, d + 1));
        input.slice_mut(s![.., ..d]).assign(&xs);
        for (v, &t) in input.column_mut(d).iter_mut().zip(times) {
            *v = t / self.horizon;
        }
        Ok(input)
    }

    /// Affine map of layer `l` applied to the rows of `input`.
    fn affine(&self, l: usize, input: &Array2<f64>) -> Array2<f64> {
        let shape = (input.nrows(), self.shapes[l].0);
        let mut z = self.bias(l).broadcast(shape).expect("bias broadcast").to_owned();
        general_mat_mul(1.0, input, &self.weight(l).t(), 1.0, &mut z);
        z
    }

    fn forward_assembled(&self, mut a: Array2<f64>, keep: Option<&mut Vec<Array2<f64>>>) -> Array2<f64> {
        let last = self.n_layers() - 1;
        let mut keep = keep;
        for l in 0..last {
            let mut z = self.affine(l, &a);
            tanh_in_place(z.as_slice_mut().expect("standard layout"));
            if let Some(store) = keep.as_deref_mut() {
                store.push(std::mem::replace(&mut a, z));
            } else {
                a = z;
            }
        }
        let out = self.affine(last, &a);
        if let Some(store) = keep {
            store.push(a);
        }
        out
    }

    /// Network outputs for the rows of `xs` (`n x d`) at per-row times.
    pub fn forward_batch(&self, xs: ArrayView2<'_, f64>, times: &[f64]) -> Result<Array2<f64>> {
        if !xs.iter().chain(times).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        let input = self.assemble(xs, times)?;
        Ok(self.forward_assembled(input, None))
    }

    pub fn forward(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("row shape");
        Ok(self.forward_batch(xs, &[t])?.into_raw_vec_and_offset().0)
    }

    /// Upper bound on the Lipschitz constant in `x`: the product of the
    /// Frobenius norms of the weight matrices (tanh is 1-Lipschitz).
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.n_layers())
            .map(|l| {
                let w = self.weight(l);
                let cols = if l == 0 { self.dim } else { w.ncols() };
                w.slice(s![.., ..cols]).iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .product()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.values.len() + 8 * self.shapes.len() + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.shapes.len() as u32).to_le_bytes());
        for (l, &(r, c)) in self.shapes.iter().enumerate() {
            buf.extend_from_slice(&(r as u32).to_le_bytes());
            buf.extend_from_slice(&(c as u32).to_le_bytes());
            for v in &self.values[self.offsets[l]..self.offsets[l + 1]] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    /// Loads weights saved by [`save`](Self::save) for a network on `cfg`.
    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: &str| Error::format(path, reason);
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("not a weights file"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        let word = |at: usize| -> Result<usize> {
            body.get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| bad("truncated header"))
        };
        if word(4)? != FORMAT_VERSION as usize {
            return Err(bad("unsupported version"));
        }
        let dim = word(8)?;
        if dim != cfg.dim {
            return Err(Error::format(path, format!("network dimension {dim} but configuration has d = {}", cfg.dim)));
        }
        let n_layers = word(12)?;
        let mut pos = 16;
        let mut shapes = Vec::with_capacity(n_layers);
        let mut values = Vec::new();
        for _ in 0..n_layers {
            let (r, c) = (word(pos)?, word(pos + 4)?);
            pos += 8;
            let count = r * c + r;
            let chunk = body.get(pos..pos + 8 * count).ok_or_else(|| bad("truncated layer"))?;
            values.extend(chunk.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
            pos += 8 * count;
            shapes.push((r, c));
        }
        if pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        let chained = shapes.windows(2).all(|w| w[1].1 == w[0].0);
        if shapes.len() < 2 || shapes[0].1 != dim + 1 || shapes[shapes.len() - 1].0 != dim || !chained {
            return Err(bad("inconsistent layer shapes"));
        }
        let mut params = Self::from_shapes(dim, cfg.horizon, shapes);
        params.values = values;
        Ok(params)
    }
}

/// Fresh network with the default architecture.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ScoreNetParams> {
    ScoreNetParams::init(cfg, &DEFAULT_HIDDEN, seed)
}

/// Mean squared residual `mean_i |s(x_i, t_i) - target_i|^2` and its exact
/// gradient with respect to every parameter.
pub fn loss_and_grad(
    params: &ScoreNetParams,
    xs: ArrayView2<'_, f64>,
    times: &[f64],
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, ScoreNetParams)> {
    let n = xs.nrows();
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if targets.dim() != (n, params.dim) {
        return Err(Error::Shape(format!("targets {:?} for {n} points of dimension {}", targets.dim(), params.dim)));
    }
    let input = params.assemble(xs, times)?;
    let mut acts = Vec::with_capacity(params.n_layers());
    let out = params.forward_assembled(input, Some(&mut acts));
    let mut delta = out - targets;
    let loss = delta.iter().map(|v| v * v).sum::<f64>() / n as f64;
    delta *= 2.0 / n as f64;

    let mut grads = params.zeros_like();
    for l in (0..params.n_layers()).rev() {
        let a = &acts[l];
        general_mat_mul(1.0, &delta.t(), a, 0.0, &mut grads.weight_mut(l));
        grads.bias_mut(l).assign(&delta.sum_axis(Axis(0)));
        if l > 0 {
            let mut back = delta.dot(&params.weight(l));
            back.zip_mut_with(a, |g, &h| *g *= 1.0 - h * h);
            delta = back;
        }
    }
    Ok((loss, grads))
}

/// Adam hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate", "must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(name, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        Ok(())
    }
}

/// Moment accumulators of Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize, config: OptimizerConfig) -> Self {
        Self { config, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }
}

/// Outcome of [`optimizer_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Applied,
    /// The gradient had a non-finite entry; nothing was changed.
    SkippedNonFinite,
}

/// One bias-corrected Adam update on flat slices.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<StepStatus> {
    if values.len() != grads.len() || values.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} optimizer slots",
            values.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Ok(StepStatus::SkippedNonFinite);
    }
    state.step += 1;
    let c = &state.config;
    let step = state.step as i32;
    let correct1 = 1.0 - c.beta1.powi(step);
    let correct2 = 1.0 - c.beta2.powi(step);
    for (((w, &g), m), v) in values.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
        let m_hat = *m / correct1;
        let v_hat = *v / correct2;
        *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    Ok(StepStatus::Applied)
}

pub fn optimizer_step(
    params: &mut ScoreNetParams,
    grads: &ScoreNetParams,
    state: &mut OptimizerState,
) -> Result<StepStatus> {
    if !params.same_layout(grads) {
        return Err(Error::Shape("gradient layout differs from the parameters".into()));
    }
    adam_update(&mut params.values, &grads.values, state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn random_batch(n: usize, d: usize, seed: u64) -> (Array2<f64>, Vec<f64>, Array2<f64>) {
        let mut rng = RngStream::new(seed);
        let xs = Array2::from_shape_fn((n, d), |_| rng.random_range(-3.0..3.0));
        let times = (0..n).map(|_| rng.random_range(0.05..10.0)).collect();
        let targets = Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0));
        (xs, times, targets)
    }

    fn perturbed_biases(cfg: &ModelConfig, hidden: &[usize], seed: u64) -> ScoreNetParams {
        let mut p = ScoreNetParams::init(cfg, hidden, seed).unwrap();
        let mut rng = RngStream::new(seed + 1);
        for l in 0..p.n_layers() {
            p.bias_mut(l).iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        p
    }

    #[test]
    fn init_is_deterministic_and_sane() {
        let cfg = ModelConfig::default();
        let a = init_params(&cfg, 3).unwrap();
        assert_eq!(a, init_params(&cfg, 3).unwrap());
        assert_ne!(a, init_params(&cfg, 4).unwrap());
        assert_eq!(a.weight(0).dim(), (200, 3));
        assert_eq!(a.shapes().len(), 5);
        assert_eq!(a.weight(4).dim(), (2, 200));
        assert!(a.bias(2).iter().all(|&b| b == 0.0));
        let mut rng = RngStream::new(1);
        for _ in 0..200 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let out = a.forward(&x, rng.random_range(0.05..10.0)).unwrap();
            assert!(out.iter().map(|v| v * v).sum::<f64>().sqrt() < 10.0);
        }
    }

    #[test]
    fn forward_basic_properties() {
        let cfg = ModelConfig::default();
        let zero = ScoreNetParams::zeros(2, &DEFAULT_HIDDEN, cfg.horizon).unwrap();
        assert_eq!(zero.forward(&[1.0, -2.0], 3.0).unwrap(), vec![0.0, 0.0]);

        let p = init_params(&cfg, 5).unwrap();
        let mut doubled = p.clone();
        let last = p.n_layers() - 1;
        doubled.weight_mut(last).mapv_inplace(|w| 2.0 * w);
        let a = p.forward(&[0.3, 0.7], 2.0).unwrap();
        let b = doubled.forward(&[0.3, 0.7], 2.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((2.0 * x - y).abs() <= 1e-14 * y.abs().max(1.0));
        }

        let (xs, times, _) = random_batch(17, 2, 6);
        let batch = p.forward_batch(xs.view(), &times).unwrap();
        for i in 0..17 {
            let single = p.forward(xs.row(i).as_slice().unwrap(), times[i]).unwrap();
            for c in 0..2 {
                assert!((single[c] - batch[[i, c]]).abs() <= 1e-13 * single[c].abs().max(1.0));
            }
        }
        assert!(p.forward(&[f64::NAN, 0.0], 1.0).is_err());
        assert!(p.forward(&[0.0], 1.0).is_err());
    }

    #[test]
    fn zero_residual_gives_zero_loss_and_gradient() {
        let cfg = ModelConfig::default();
        let p = perturbed_biases(&cfg, &[8, 8], 7);
        let (xs, times, _) = random_batch(5, 2, 8);
        let targets = p.forward_batch(xs.view(), &times).unwrap();
        let (loss, grads) = loss_and_grad(&p, xs.view(), &times, targets.view()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn repeated_point_has_single_point_loss() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, 9).unwrap();
        let (xs, times, targets) = random_batch(1, 2, 10);
        let (single, _) = loss_and_grad(&p, xs.view(), &times, targets.view()).unwrap();
        let rep = |a: &Array2<f64>| ndarray::concatenate(Axis(0), &[a.view(); 6]).unwrap();
        let (many, _) = loss_and_grad(&p, rep(&xs).view(), &[times[0]; 6], rep(&targets).view()).unwrap();
        assert!((single - many).abs() <= 1e-14 * single);
    }

    #[test]
    fn loss_rejects_shape_mismatch() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, 9).unwrap();
        let (xs, times, targets) = random_batch(3, 2, 10);
        assert!(loss_and_grad(&p, xs.view(), &times[..2], targets.view()).is_err());
        assert!(loss_and_grad(&p, xs.view(), &times, targets.slice(s![..2, ..])).is_err());
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(loss_and_grad(&p, empty.view(), &[], empty.view()).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = ModelConfig::default();
        let mut p = perturbed_biases(&cfg, &[6, 5, 4], 11);
        let (xs, times, targets) = random_batch(4, 2, 12);
        let (_, grads) = loss_and_grad(&p, xs.view(), &times, targets.view()).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let orig = p.as_slice()[i];
            p.as_mut_slice()[i] = orig + h;
            let up = loss_and_grad(&p, xs.view(), &times, targets.view()).unwrap().0;
            p.as_mut_slice()[i] = orig - h;
            let down = loss_and_grad(&p, xs.view(), &times, targets.view()).unwrap().0;
            p.as_mut_slice()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grads.as_slice()[i];
            assert!((g - fd).abs() <= 1e-4 * g.abs().max(fd.abs()).max(1e-6), "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn lipschitz_bound_holds() {
        let cfg = ModelConfig::default();
        let p = init_params(&cfg, 13).unwrap();
        let lip = p.lipschitz_bound();
        assert!(lip.is_finite() && lip > 0.0);
        let mut rng = RngStream::new(14);
        for _ in 0..100 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let dx = [rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)];
            let t = rng.random_range(0.05..10.0);
            let a = p.forward(&x, t).unwrap();
            let b = p.forward(&[x[0] + dx[0], x[1] + dx[1]], t).unwrap();
            let change = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
            assert!(change <= lip * (dx[0].powi(2) + dx[1].powi(2)).sqrt() + 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_and_determinism() {
        let cfg = ModelConfig::default();
        let p0 = ScoreNetParams::init(&cfg, &[4], 1).unwrap();
        let mut p = p0.clone();
        let mut state = OptimizerState::new(p.len(), OptimizerConfig::default());
        let zero = p.zeros_like();
        assert_eq!(optimizer_step(&mut p, &zero, &mut state).unwrap(), StepStatus::Applied);
        assert_eq!(p, p0);
        assert_eq!(state.step, 1);

        let mut grads = p.zeros_like();
        grads.as_mut_slice().iter_mut().enumerate().for_each(|(i, g)| *g = (i as f64).sin());
        let (mut a, mut b) = (p.clone(), p.clone());
        let (mut sa, mut sb) = (state.clone(), state.clone());
        optimizer_step(&mut a, &grads, &mut sa).unwrap();
        optimizer_step(&mut b, &grads, &mut sb).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);

        grads.as_mut_slice()[0] = f64::NAN;
        let before = a.clone();
        assert_eq!(optimizer_step(&mut a, &grads, &mut sa).unwrap(), StepStatus::SkippedNonFinite);
        assert_eq!(a, before);
        assert_eq!(sa.step, 2);

        let other = ScoreNetParams::init(&cfg, &[5], 1).unwrap();
        assert!(optimizer_step(&mut a, &other, &mut sa).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut w = [2.8];
        let mut state = OptimizerState::new(1, OptimizerConfig::default());
        let mut prev = (w[0] - 3.0f64).powi(2);
        for step in 0..500 {
            let g = [2.0 * (w[0] - 3.0)];
            adam_update(&mut w, &g, &mut state).unwrap();
            let f = (w[0] - 3.0f64).powi(2);
            if step < 100 {
                assert!(f < prev, "step {step}");
            }
            prev = f;
        }
        assert!((w[0] - 3.0).abs() < 1e-2, "w = {}", w[0]);
    }

    #[test]
    fn weights_round_trip() {
        let cfg = ModelConfig::default();
        let p = perturbed_biases(&cfg, &DEFAULT_HIDDEN, 15);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.jdlw");
        p.save(&path).unwrap();
        let q = ScoreNetParams::load(&path, &cfg).unwrap();
        assert_eq!(p, q);
        let (xs, times, _) = random_batch(10, 2, 16);
        assert_eq!(p.forward_batch(xs.view(), &times).unwrap(), q.forward_batch(xs.view(), &times).unwrap());

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[100] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ScoreNetParams::load(&path, &cfg), Err(Error::Format { .. })));
        p.save(&path).unwrap();
        let wide = ModelConfig { dim: 4, ..cfg };
        assert!(ScoreNetParams::load(&path, &wide).is_err());
    }
}
