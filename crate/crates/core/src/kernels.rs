//! Radial kernels of the forward process.
//!
//! `G1(x, t)` is the isotropic propagator density at radius `x` and
//! `G2(x, t)` the radial component of the generalized-score numerator; both
//! are one-dimensional Bessel integrals over the wavenumber. The conditional
//! generalized score of the forward process is `(r / |r|) G2 / G1`.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ModelConfig, QUAD_PANEL_ORDER};
use crate::error::{Error, Result};
use crate::levy_noise::psi_over_k2;
use crate::special_math::{bessel_pair, QuadratureRule};

const MAGIC: &[u8; 4] = b"JDLK";
const FORMAT_VERSION: u32 = 1;
/// Floor applied to the propagator before it is used as a divisor.
pub const G1_FLOOR: f64 = 1e-300;
/// Quadrature noise tolerated below zero before a table entry is rejected.
const NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Nodes whose propagator falls below this fraction of the value at the
/// origin are treated as unresolved when building the score ratio.
const RESOLVED_FRACTION: f64 = 1e-12;

/// Characteristic function of the transition law started at the origin,
/// `((1 + s k^2 e^{-t}/2) / (1 + s k^2/2))^lambda exp(-(D/2) k^2 (1 - e^{-t}))`.
pub fn g1_hat(k: f64, t: f64, cfg: &ModelConfig) -> f64 {
    let decay = (-t).exp();
    let half_s_k2 = 0.5 * cfg.sigma2 * k * k;
    let jumps = if cfg.jump_rate == 0.0 {
        1.0
    } else {
        ((1.0 + half_s_k2 * decay) / (1.0 + half_s_k2)).powf(cfg.jump_rate)
    };
    jumps * (0.5 * cfg.diffusion * k * k * (-t).exp_m1()).exp()
}

/// Quadrature machinery for direct evaluation of `G1` and `G2`.
///
/// The wavenumber integrals are truncated at `k_max` and evaluated with
/// `n_quad` composite Gauss-Legendre nodes. Each integral is a plain
/// node-ordered sum of `radial * temporal` factors, so [`tabulate`] (which
/// reuses the radial factors across times) reproduces direct calls bit for
/// bit.
#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    cfg: ModelConfig,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    psi_weight: Vec<f64>,
    order: u32,
    norm: f64,
    origin: f64,
}

impl KernelEvaluator {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let panels = cfg.n_quad / QUAD_PANEL_ORDER;
        let rule = QuadratureRule::composite_gauss_legendre(0.0, cfg.k_max, panels, QUAD_PANEL_ORDER)?;
        let order = (cfg.dim / 2 - 1) as u32;
        // Limit of (k/x)^nu J_nu(kx) / k^{2 nu} as x -> 0.
        let factorial: f64 = (1..=order).map(f64::from).product();
        let origin = 1.0 / (2f64.powi(order as i32) * factorial);
        let psi_weight = rule.nodes().iter().map(|&k| psi_over_k2(k, cfg)).collect();
        Ok(Self {
            cfg: cfg.clone(),
            nodes: rule.nodes().to_vec(),
            weights: rule.weights().to_vec(),
            psi_weight,
            order,
            norm: (2.0 * std::f64::consts::PI).powf(-(cfg.dim as f64) / 2.0),
            origin,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    fn check(&self, x: f64, t: f64) -> Result<()> {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(Error::param("x", format!("must be finite and non-negative, got {x}")));
        }
        if !(t >= self.cfg.t_min) || !t.is_finite() {
            return Err(Error::TimeOutOfRange { t, t_min: self.cfg.t_min, t_max: f64::INFINITY });
        }
        Ok(())
    }

    /// Radial factors (including quadrature weights and normalization) of the
    /// `G1` and `G2` integrands at each node.
    fn radial_factors(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let nu = self.order as i32;
        let mut f1 = Vec::with_capacity(self.nodes.len());
        let mut f2 = Vec::with_capacity(self.nodes.len());
        for (&k, &w) in self.nodes.iter().zip(&self.weights) {
            let scaled = self.norm * w * k;
            if x == 0.0 {
                f1.push(scaled * self.origin * k.powi(2 * nu));
                f2.push(0.0);
            } else {
                let (j_nu, j_next) = bessel_pair(self.order, k * x);
                let ratio = (k / x).powi(nu);
                f1.push(scaled * ratio * j_nu);
                f2.push(-scaled * k * ratio * j_next);
            }
        }
        (f1, f2)
    }

    /// Temporal factors `G1_hat(k, t)` and `G1_hat(k, t) psi(k)/k^2`.
    fn temporal_factors(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let a1: Vec<f64> = self.nodes.iter().map(|&k| g1_hat(k, t, &self.cfg)).collect();
        let a2 = a1.iter().zip(&self.psi_weight).map(|(a, p)| a * p).collect();
        (a1, a2)
    }

    pub fn g1(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.both(x, t)?.0)
    }

    pub fn g2(&self, x: f64, t: f64) -> Result<f64> {
        Ok(self.both(x, t)?.1)
    }

    /// `(G1(x, t), G2(x, t))`.
    pub fn both(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        self.check(x, t)?;
        let (f1, f2) = self.radial_factors(x);
        let (a1, a2) = self.temporal_factors(t);
        Ok((dot(&f1, &a1), dot(&f2, &a2)))
    }

    /// Radial inverse transform of `G1_hat * psi / k^2`, whose x-derivative is
    /// `G2`.
    pub fn potential(&self, x: f64, t: f64) -> Result<f64> {
        self.check(x, t)?;
        let (f1, _) = self.radial_factors(x);
        let (_, a2) = self.temporal_factors(t);
        Ok(dot(&f1, &a2))
    }
}

/// Compensated dot product (Ogita-Rump-Oishi `Dot2`): as accurate as a
/// twice-working-precision sum, which matters in tails where the kernels are
/// many orders of magnitude below the integrand.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let p_err = x.mul_add(*y, -p);
        let t = sum + p;
        let z = t - sum;
        comp += (sum - (t - z)) + (p - z) + p_err;
        sum = t;
    }
    sum + comp
}

/// `G1(x, t)` by direct quadrature. Builds a fresh evaluator; use
/// [`KernelEvaluator`] for repeated calls.
pub fn g1(x: f64, t: f64, cfg: &ModelConfig) -> Result<f64> {
    KernelEvaluator::new(cfg)?.g1(x, t)
}

/// `G2(x, t)` by direct quadrature.
pub fn g2(x: f64, t: f64, cfg: &ModelConfig) -> Result<f64> {
    KernelEvaluator::new(cfg)?.g2(x, t)
}

/// `n` equally spaced points from `lo` to `hi`, with the last exactly `hi`.
fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + step * i as f64 }).collect()
}

/// 64-bit hash of the configuration fields that determine the kernels.
pub fn fingerprint(cfg: &ModelConfig) -> u64 {
    let mut h = Sha256::new();
    h.update(cfg.diffusion.to_le_bytes());
    h.update(cfg.jump_rate.to_le_bytes());
    h.update(cfg.sigma2.to_le_bytes());
    h.update((cfg.dim as u64).to_le_bytes());
    h.update(cfg.k_max.to_le_bytes());
    h.update((cfg.n_quad as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Tabulates `G1` and `G2` on the `n_grid x n_grid` grid of `[t_min, T] x
/// [0, x_max]`.
pub fn tabulate(cfg: &ModelConfig) -> Result<KernelTable> {
    let eval = KernelEvaluator::new(cfg)?;
    let n = cfg.n_grid;
    let t_grid = uniform_grid(cfg.t_min, cfg.horizon, n);
    let x_grid = uniform_grid(0.0, cfg.x_max, n);
    let temporal: Vec<_> = t_grid.par_iter().map(|&t| eval.temporal_factors(t)).collect();
    let columns: Vec<(Vec<f64>, Vec<f64>)> = x_grid
        .par_iter()
        .map(|&x| {
            let (f1, f2) = eval.radial_factors(x);
            temporal.iter().map(|(a1, a2)| (dot(&f1, a1), dot(&f2, a2))).unzip()
        })
        .collect();
    let mut g1 = Array2::zeros((n, n));
    let mut g2 = Array2::zeros((n, n));
    for (j, (c1, c2)) in columns.into_iter().enumerate() {
        for i in 0..n {
            g1[[i, j]] = c1[i];
            g2[[i, j]] = c2[i];
        }
    }
    KernelTable::from_parts(t_grid, x_grid, g1, g2, fingerprint(cfg))
}

/// Tabulated kernels with bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    t_grid: Vec<f64>,
    x_grid: Vec<f64>,
    g1_values: Array2<f64>,
    g2_values: Array2<f64>,
    /// `(1 - e^{-t}) G2 / G1` at the nodes, linearly continued past
    /// unresolved nodes.
    ratio: Array2<f64>,
    fingerprint: u64,
}

impl KernelTable {
    /// Assembles a table from grids and raw values (rows are times). Small
    /// negative `g1` entries from quadrature noise are clamped to zero.
    pub fn from_parts(
        t_grid: Vec<f64>,
        x_grid: Vec<f64>,
        mut g1_values: Array2<f64>,
        g2_values: Array2<f64>,
        fingerprint: u64,
    ) -> Result<Self> {
        let shape = (t_grid.len(), x_grid.len());
        if shape.0 < 2 || shape.1 < 2 {
            return Err(Error::Shape("kernel grids need at least two points per axis".into()));
        }
        if g1_values.dim() != shape || g2_values.dim() != shape {
            return Err(Error::Shape(format!(
                "kernel values {:?} / {:?} do not match grids {shape:?}",
                g1_values.dim(),
                g2_values.dim()
            )));
        }
        for (name, grid) in [("t_grid", &t_grid), ("x_grid", &x_grid)] {
            if !grid.windows(2).all(|w| w[1] > w[0]) || !grid.iter().all(|v| v.is_finite()) {
                return Err(Error::param(name, "must be finite and strictly increasing"));
            }
        }
        if x_grid[0] != 0.0 {
            return Err(Error::param("x_grid", "must start at the origin"));
        }
        for v in g1_values.iter_mut() {
            if !v.is_finite() || *v < -NEGATIVE_TOLERANCE {
                return Err(Error::NonFinite(format!("propagator table entry {v}")));
            }
            *v = v.max(0.0);
        }
        if !g2_values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("score kernel table entry".into()));
        }
        let ratio = score_ratio(&t_grid, &x_grid, &g1_values, &g2_values);
        Ok(Self { t_grid, x_grid, g1_values, g2_values, ratio, fingerprint })
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn g1_values(&self) -> &Array2<f64> {
        &self.g1_values
    }

    pub fn g2_values(&self) -> &Array2<f64> {
        &self.g2_values
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn t_range(&self) -> (f64, f64) {
        (self.t_grid[0], self.t_grid[self.t_grid.len() - 1])
    }

    pub fn x_max(&self) -> f64 {
        self.x_grid[self.x_grid.len() - 1]
    }

    fn time_cell(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.t_range();
        if !(t >= lo && t <= hi) {
            return Err(Error::TimeOutOfRange { t, t_min: lo, t_max: hi });
        }
        Ok(cell(&self.t_grid, t))
    }

    /// Bilinear interpolation of `(G1, G2)` at radius `x` and time `t`.
    ///
    /// Past `x_max` the propagator is held at its boundary value (floored at
    /// [`G1_FLOOR`]) and `G2` continues linearly from the last two columns.
    pub fn interp(&self, x: f64, t: f64) -> Result<(f64, f64)> {
        if !(x >= 0.0) || x.is_nan() {
            return Err(Error::param("x", format!("must be non-negative, got {x}")));
        }
        let (i, ft) = self.time_cell(t)?;
        let along_t = |values: &Array2<f64>, j: usize| lerp(values[[i, j]], values[[i + 1, j]], ft);
        let last = self.x_grid.len() - 1;
        if x > self.x_max() {
            let g1 = along_t(&self.g1_values, last).max(G1_FLOOR);
            let g2 = extrapolate(&self.x_grid, x, along_t(&self.g2_values, last - 1), along_t(&self.g2_values, last));
            return Ok((g1, g2));
        }
        let (j, fx) = cell(&self.x_grid, x);
        let bilinear = |values: &Array2<f64>| lerp(along_t(values, j), along_t(values, j + 1), fx);
        Ok((bilinear(&self.g1_values), bilinear(&self.g2_values)))
    }

    /// Interpolated `G2 / G1` at radius `r` and time `t`.
    ///
    /// The ratio times `1 - e^{-t}` is interpolated bilinearly and continued
    /// linearly in `r` past the grid. For Gaussian noise that product is
    /// `-r/2` at every time, so the interpolation is exact there.
    pub fn score_ratio(&self, r: f64, t: f64) -> Result<f64> {
        let (i, ft) = self.time_cell(t)?;
        let along_t = |j: usize| lerp(self.ratio[[i, j]], self.ratio[[i + 1, j]], ft);
        let last = self.x_grid.len() - 1;
        let scaled = if r > self.x_max() {
            extrapolate(&self.x_grid, r, along_t(last - 1), along_t(last))
        } else {
            let (j, fx) = cell(&self.x_grid, r);
            lerp(along_t(j), along_t(j + 1), fx)
        };
        Ok(scaled / -(-t).exp_m1())
    }

    /// Conditional generalized score `(r / |r|) G2(|r|, t) / G1(|r|, t)` with
    /// `r = y - y0 e^{-t/2}`, written into `out`.
    pub fn conditional_score_into(&self, y: &[f64], y0: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        if y.len() != y0.len() || out.len() != y.len() {
            return Err(Error::Shape(format!(
                "y has {} components, y0 {}, output {}",
                y.len(),
                y0.len(),
                out.len()
            )));
        }
        if !y.iter().chain(y0).all(|v| v.is_finite()) || !t.is_finite() {
            return Err(Error::NonFinite("conditional score input".into()));
        }
        let shrink = (-0.5 * t).exp();
        for ((o, a), b) in out.iter_mut().zip(y).zip(y0) {
            *o = a - b * shrink;
        }
        let r = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r < 1e-12 {
            self.time_cell(t)?;
            out.fill(0.0);
            return Ok(());
        }
        let scale = self.score_ratio(r, t)? / r;
        out.iter_mut().for_each(|o| *o *= scale);
        Ok(())
    }

    pub fn conditional_score(&self, y: &[f64], y0: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; y.len()];
        self.conditional_score_into(y, y0, t, &mut out)?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let n = self.t_grid.len();
        let mut buf = Vec::with_capacity(40 + 16 * n * n);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint.to_le_bytes());
        buf.extend_from_slice(&(n as u32).to_le_bytes());
        let (t_min, t_max) = self.t_range();
        for v in [t_min, t_max, self.x_max()] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.g1_values.iter().chain(self.g2_values.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a table and checks it was built for `cfg`.
    pub fn load(path: &Path, cfg: &ModelConfig) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut rd = ByteReader { bytes: &bytes, pos: 0, path };
        if rd.take(4)? != MAGIC {
            return Err(Error::format(path, "not a kernel table"));
        }
        let version = rd.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let found = rd.u64()?;
        let expected = fingerprint(cfg);
        if found != expected {
            return Err(Error::Fingerprint { path: path.to_path_buf(), expected, found });
        }
        let n = rd.u32()? as usize;
        let (t_min, t_max, x_max) = (rd.f64()?, rd.f64()?, rd.f64()?);
        if n != cfg.n_grid || t_min != cfg.t_min || t_max != cfg.horizon || x_max != cfg.x_max {
            return Err(Error::format(path, "grid does not match the configuration"));
        }
        let g1 = rd.matrix(n)?;
        let g2 = rd.matrix(n)?;
        if rd.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes"));
        }
        Self::from_parts(uniform_grid(t_min, t_max, n), uniform_grid(0.0, x_max, n), g1, g2, found)
            .map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Index of the grid cell holding `v` and the fractional position inside it.
/// Node queries land on a cell edge with fraction exactly 0 (or 1 at the end).
fn cell(grid: &[f64], v: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    let (lo, hi) = (grid[0], grid[last]);
    let guess = ((v - lo) / (hi - lo) * last as f64).floor();
    let mut i = (guess.max(0.0) as usize).min(last - 1);
    while i > 0 && v < grid[i] {
        i -= 1;
    }
    while i + 1 < last && v >= grid[i + 1] {
        i += 1;
    }
    let frac = ((v - grid[i]) / (grid[i + 1] - grid[i])).clamp(0.0, 1.0);
    (i, frac)
}

fn lerp(a: f64, b: f64, frac: f64) -> f64 {
    (1.0 - frac) * a + frac * b
}

/// Straight-line continuation through the last two grid columns.
fn extrapolate(grid: &[f64], x: f64, before: f64, at_end: f64) -> f64 {
    let n = grid.len();
    let slope = (at_end - before) / (grid[n - 1] - grid[n - 2]);
    at_end + slope * (x - grid[n - 1])
}

/// Nodal `(1 - e^{-t}) G2 / G1`. In each time row, nodes past the first one where the
/// propagator drops below `RESOLVED_FRACTION` of its value at the origin are
/// dominated by quadrature round-off; the ratio there is continued linearly
/// from the last two resolved nodes.
fn score_ratio(t_grid: &[f64], x_grid: &[f64], g1: &Array2<f64>, g2: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = g1.dim();
    let mut ratio = Array2::zeros((rows, cols));
    for i in 0..rows {
        let scale = -(-t_grid[i]).exp_m1();
        let threshold = g1[[i, 0]] * RESOLVED_FRACTION;
        let resolved = (1..cols).take_while(|&j| g1[[i, j]] > threshold).last().unwrap_or(0).max(1);
        for j in 1..=resolved {
            ratio[[i, j]] = scale * g2[[i, j]] / g1[[i, j]].max(G1_FLOOR);
        }
        let slope = (ratio[[i, resolved]] - ratio[[i, resolved - 1]]) / (x_grid[resolved] - x_grid[resolved - 1]);
        for j in resolved + 1..cols {
            ratio[[i, j]] = ratio[[i, resolved]] + slope * (x_grid[j] - x_grid[resolved]);
        }
    }
    ratio
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self, n: usize) -> Result<Array2<f64>> {
        let mut values = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            values.push(self.f64()?);
        }
        Ok(Array2::from_shape_vec((n, n), values).expect("shape matches length"))
    }
}

/// Conditional score of the forward process when the noise is alpha-stable,
/// `-(y - y0 e^{-t/2}) / (2 (1 - e^{-t}))`. The expression does not depend
/// on `alpha`; it coincides with the Gaussian (`lambda = 0`, `D = 1`) case.
pub fn closed_form_score_stable(y: &[f64], y0: &[f64], t: f64, alpha: f64) -> Result<Vec<f64>> {
    if !(alpha > 1.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", format!("must lie in (1, 2], got {alpha}")));
    }
    if !(t > 0.0) {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    if y.len() != y0.len() {
        return Err(Error::Shape(format!("y has {} components, y0 {}", y.len(), y0.len())));
    }
    let shrink = (-0.5 * t).exp();
    let denom = -2.0 * (-t).exp_m1();
    Ok(y.iter().zip(y0).map(|(a, b)| -(a - b * shrink) / denom).collect())
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::special_math::{bessel_j, RngStream};
    use rand::Rng;

    fn default_table() -> &'static KernelTable {
        static TABLE: OnceLock<KernelTable> = OnceLock::new();
        TABLE.get_or_init(|| tabulate(&ModelConfig::default()).unwrap())
    }

    fn gaussian_cfg() -> ModelConfig {
        ModelConfig { jump_rate: 0.0, ..Default::default() }
    }

    fn gaussian_density(x: f64, t: f64) -> f64 {
        let v = 1.0 - (-t).exp();
        (-x * x / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v)
    }

    #[test]
    fn g1_hat_values() {
        let cfg = ModelConfig::default();
        for t in [0.1, 1.0, 10.0] {
            assert_eq!(g1_hat(0.0, t, &cfg), 1.0);
        }
        for k in [0.5, 3.0] {
            assert_eq!(g1_hat(k, 0.0, &cfg), 1.0);
        }
        assert!((g1_hat(1.0, 50.0, &cfg) - 0.5 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((0.5 * (-0.5f64).exp() - 0.30327).abs() < 1e-5);
    }

    #[test]
    fn g1_gaussian_reduction() {
        let eval = KernelEvaluator::new(&gaussian_cfg()).unwrap();
        let got = eval.g1(0.5, 1.0).unwrap();
        assert!((got - 0.206604).abs() < 1e-4);
        assert!((got - gaussian_density(0.5, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn g1_normalization() {
        let eval = KernelEvaluator::new(&ModelConfig::default()).unwrap();
        let rule = QuadratureRule::composite_gauss_legendre(0.0, 10.0, 50, 20).unwrap();
        for t in [0.5, 1.0, 5.0, 10.0] {
            let mass: f64 = rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .map(|(&x, &w)| w * 2.0 * std::f64::consts::PI * x * eval.g1(x, t).unwrap())
                .sum();
            assert!((mass - 1.0).abs() < 1e-3, "t={t}: mass {mass}");
        }
    }

    #[test]
    fn g1_becomes_stationary() {
        let cfg = ModelConfig::default();
        let eval = KernelEvaluator::new(&cfg).unwrap();
        for x in uniform_grid(0.0, cfg.x_max, cfg.n_grid) {
            let diff = (eval.g1(x, 50.0).unwrap() - eval.g1(x, 100.0).unwrap()).abs();
            assert!(diff < 1e-6, "x={x}");
        }
    }

    #[test]
    fn g2_vanishes_at_origin() {
        let eval = KernelEvaluator::new(&ModelConfig::default()).unwrap();
        for t in [0.05, 1.0, 10.0] {
            assert_eq!(eval.g2(0.0, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn g2_gaussian_ratio() {
        let eval = KernelEvaluator::new(&gaussian_cfg()).unwrap();
        for t in [0.5, 1.0, 5.0] {
            for i in 0..50 {
                let x = 0.1 + 4.9 * i as f64 / 49.0;
                let (a, b) = eval.both(x, t).unwrap();
                let want = -x / (2.0 * (1.0 - (-t).exp()));
                let rel = ((b / a) - want).abs() / want.abs();
                // Past ~1e-13 of the peak the propagator is at the round-off
                // floor of the terms being summed.
                let v = 1.0 - (-t).exp();
                let tol = if (-x * x / (2.0 * v)).exp() > 1e-13 { 1e-4 } else { 1e-3 };
                assert!(rel < tol, "x={x} t={t}: {} vs {want}", b / a);
            }
        }
    }

    /// Radial inverse transform for d = 2 from its definition with many more
    /// nodes than the evaluator uses.
    fn brute_force_potential(x: f64, t: f64, cfg: &ModelConfig) -> f64 {
        let rule = QuadratureRule::composite_gauss_legendre(0.0, 60.0, 600, 16).unwrap();
        rule.nodes()
            .iter()
            .zip(rule.weights())
            .map(|(&k, &w)| w * k * bessel_j(0, k * x).unwrap() * g1_hat(k, t, cfg) * psi_over_k2(k, cfg))
            .sum::<f64>()
            / (2.0 * std::f64::consts::PI)
    }

    #[test]
    fn g2_matches_finite_difference_of_potential() {
        let cfg = ModelConfig::default();
        let eval = KernelEvaluator::new(&cfg).unwrap();
        let mut rng = RngStream::new(77);
        let h = 1e-4;
        for _ in 0..20 {
            let x = rng.random_range(0.05..cfg.x_max);
            let t = rng.random_range(cfg.t_min..cfg.horizon);
            let fd = (brute_force_potential(x + h, t, &cfg) - brute_force_potential(x - h, t, &cfg)) / (2.0 * h);
            let got = eval.g2(x, t).unwrap();
            assert!((got - fd).abs() < 1e-5, "x={x} t={t}: {got} vs {fd}");
            let own = (eval.potential(x + h, t).unwrap() - eval.potential(x - h, t).unwrap()) / (2.0 * h);
            assert!((got - own).abs() < 1e-5);
        }
    }

    #[test]
    fn kernels_reject_early_times() {
        let cfg = ModelConfig::default();
        assert!(matches!(g1(1.0, 0.01, &cfg), Err(Error::TimeOutOfRange { .. })));
        assert!(g2(1.0, 0.01, &cfg).is_err());
        assert!(g1(-1.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn table_structure() {
        let cfg = ModelConfig::default();
        let table = default_table();
        assert_eq!(table.g1_values().dim(), (200, 200));
        assert!(table.g1_values().iter().all(|&v| v >= 0.0));
        assert!(table.g2_values().column(0).iter().all(|&v| v == 0.0));
        assert_eq!(table.t_range(), (cfg.t_min, cfg.horizon));
        assert_eq!(table.x_max(), cfg.x_max);
        assert_eq!(table.fingerprint(), fingerprint(&cfg));
        for row in table.g1_values().rows() {
            assert!(row.windows(2).into_iter().all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn tabulation_is_deterministic_and_matches_direct_calls() {
        let cfg = ModelConfig { n_grid: 20, ..Default::default() };
        let a = tabulate(&cfg).unwrap();
        let b = tabulate(&cfg).unwrap();
        assert_eq!(a, b);
        let eval = KernelEvaluator::new(&cfg).unwrap();
        for (i, &t) in a.t_grid().iter().enumerate() {
            for (j, &x) in a.x_grid().iter().enumerate() {
                let (g1, g2) = eval.both(x, t).unwrap();
                assert_eq!(a.g1_values()[[i, j]], g1.max(0.0));
                assert_eq!(a.g2_values()[[i, j]], g2);
            }
        }
    }

    #[test]
    fn interp_nodes_and_midpoints() {
        let table = default_table();
        for &(i, j) in &[(0, 0), (9, 17), (57, 3), (199, 198), (120, 199), (199, 199)] {
            let (t, x) = (table.t_grid()[i], table.x_grid()[j]);
            let (g1, g2) = table.interp(x, t).unwrap();
            assert_eq!(g1, table.g1_values()[[i, j]]);
            assert_eq!(g2, table.g2_values()[[i, j]]);
        }
        for &(i, j) in &[(0, 0), (40, 40), (150, 7)] {
            let t = 0.5 * (table.t_grid()[i] + table.t_grid()[i + 1]);
            let x = 0.5 * (table.x_grid()[j] + table.x_grid()[j + 1]);
            let (g1, g2) = table.interp(x, t).unwrap();
            for (got, values) in [(g1, table.g1_values()), (g2, table.g2_values())] {
                let mean = 0.25
                    * (values[[i, j]] + values[[i + 1, j]] + values[[i, j + 1]] + values[[i + 1, j + 1]]);
                assert!((got - mean).abs() <= 1e-14 * mean.abs());
            }
        }
    }

    #[test]
    fn interp_off_grid_matches_direct_quadrature() {
        let cfg = ModelConfig::default();
        let table = default_table();
        let eval = KernelEvaluator::new(&cfg).unwrap();
        let mut rng = RngStream::new(2024);
        let mut worst = (0.0f64, 0.0, 0.0);
        for _ in 0..100 {
            let x = rng.random_range(0.0..cfg.x_max);
            let t = rng.random_range(cfg.t_min..cfg.horizon);
            let (a1, a2) = table.interp(x, t).unwrap();
            let (e1, e2) = eval.both(x, t).unwrap();
            let rel = ((a1 - e1) / e1).abs().max(if e2 == 0.0 { 0.0 } else { ((a2 - e2) / e2).abs() });
            if rel > worst.0 {
                worst = (rel, x, t);
            }
        }
        assert!(worst.0 < 1e-2, "worst relative error {:?}", worst);
    }

    #[test]
    fn interp_extrapolation_and_range() {
        let table = default_table();
        let (g1_edge, g2_edge) = table.interp(10.0, 3.0).unwrap();
        let (g1_far, g2_far) = table.interp(12.0, 3.0).unwrap();
        assert_eq!(g1_far, g1_edge.max(G1_FLOOR));
        let (_, g2_before) = table.interp(table.x_grid()[198], 3.0).unwrap();
        let slope = (g2_edge - g2_before) / (table.x_grid()[199] - table.x_grid()[198]);
        assert!((g2_far - (g2_edge + 2.0 * slope)).abs() < 1e-15);
        assert!(matches!(table.interp(1.0, 0.01), Err(Error::TimeOutOfRange { .. })));
        assert!(table.interp(1.0, 10.5).is_err());
        assert!(table.interp(-0.1, 1.0).is_err());
    }

    #[test]
    fn conditional_score_gaussian_reduction() {
        let table = tabulate(&gaussian_cfg()).unwrap();
        let mut rng = RngStream::new(8);
        for t in [0.05f64, 0.0731, 0.5, 1.0, 2.345, 5.0, 9.99] {
            for i in 0..40 {
                let r = 0.1 + 4.9 * i as f64 / 39.0;
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let y0 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
                let shrink = (-0.5 * t).exp();
                let y = [y0[0] * shrink + r * angle.cos(), y0[1] * shrink + r * angle.sin()];
                let got = table.conditional_score(&y, &y0, t).unwrap();
                let want = closed_form_score_stable(&y, &y0, t, 2.0).unwrap();
                let err = ((got[0] - want[0]).powi(2) + (got[1] - want[1]).powi(2)).sqrt();
                let norm = (want[0].powi(2) + want[1].powi(2)).sqrt();
                assert!(err / norm < 1e-3, "t={t} r={r}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn conditional_score_points_back_to_the_mean() {
        let table = default_table();
        let mut rng = RngStream::new(9);
        for _ in 0..500 {
            let t: f64 = rng.random_range(0.05..10.0);
            let y0 = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let r = rng.random_range(0.01..5.0);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let shrink = (-0.5 * t).exp();
            let dir = [angle.cos(), angle.sin()];
            let y = [y0[0] * shrink + r * dir[0], y0[1] * shrink + r * dir[1]];
            let s = table.conditional_score(&y, &y0, t).unwrap();
            let along = s[0] * dir[0] + s[1] * dir[1];
            let across = s[0] * dir[1] - s[1] * dir[0];
            assert!(along < 0.0, "t={t} r={r}");
            assert!(across.abs() <= 1e-12 * along.abs());
        }
        let y0 = [1.0, -2.0];
        let center = [y0[0] * (-0.5f64).exp(), y0[1] * (-0.5f64).exp()];
        assert_eq!(table.conditional_score(&center, &y0, 1.0).unwrap(), vec![0.0, 0.0]);
        let far = table.conditional_score(&[40.0, 0.0], &[0.0, 0.0], 0.3).unwrap();
        assert!(far.iter().all(|v| v.is_finite()) && far[0] < 0.0);
    }

    #[test]
    fn conditional_score_rejects_bad_input() {
        let table = default_table();
        assert!(table.conditional_score(&[f64::NAN, 0.0], &[0.0, 0.0], 1.0).is_err());
        assert!(table.conditional_score(&[1.0, 0.0], &[0.0], 1.0).is_err());
        assert!(table.conditional_score(&[1.0, 0.0], &[0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn fourier_round_trip() {
        let cfg = ModelConfig::default();
        let table = default_table();
        let xs = table.x_grid();
        let h = xs[1] - xs[0];
        for (i, &t) in table.t_grid().iter().enumerate() {
            if ![1.0, 5.0, 10.0].iter().any(|&s| (s - t).abs() < 1e-9) {
                continue;
            }
            for k in [0.5, 1.0, 2.0] {
                let f: Vec<f64> = xs
                    .iter()
                    .enumerate()
                    .map(|(j, &x)| 2.0 * std::f64::consts::PI * x * bessel_j(0, k * x).unwrap() * table.g1_values()[[i, j]])
                    .collect();
                let trap = h * (f.iter().sum::<f64>() - 0.5 * (f[0] + f[f.len() - 1]));
                assert!((trap - g1_hat(k, t, &cfg)).abs() < 1e-2, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn closed_form_score() {
        let s = closed_form_score_stable(&[1.0, 0.0], &[0.0, 0.0], 60.0, 1.7).unwrap();
        assert!((s[0] + 0.5).abs() < 1e-12 && s[1] == 0.0);
        let y0 = [0.3, 0.4];
        let y = [0.3 * (-0.25f64).exp(), 0.4 * (-0.25f64).exp()];
        assert_eq!(closed_form_score_stable(&y, &y0, 0.5, 1.7).unwrap(), vec![0.0, 0.0]);
        let mut rng = RngStream::new(10);
        for _ in 0..100 {
            let y = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let y0 = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let t = rng.random_range(0.01..10.0);
            assert_eq!(
                closed_form_score_stable(&y, &y0, t, 1.7).unwrap(),
                closed_form_score_stable(&y, &y0, t, 2.0).unwrap()
            );
        }
        assert!(closed_form_score_stable(&y, &y0, 0.0, 1.7).is_err());
        assert!(closed_form_score_stable(&y, &y0, 1.0, 1.0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = ModelConfig { n_grid: 12, ..Default::default() };
        let table = tabulate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.jdlk");
        table.save(&path).unwrap();
        assert_eq!(KernelTable::load(&path, &cfg).unwrap(), table);

        let other = ModelConfig { sigma2: 1.0, ..cfg.clone() };
        assert!(matches!(KernelTable::load(&path, &other), Err(Error::Fingerprint { .. })));
        let regrid = ModelConfig { n_grid: 13, ..cfg.clone() };
        assert!(matches!(KernelTable::load(&path, &regrid), Err(Error::Format { .. })));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(KernelTable::load(&path, &cfg), Err(Error::Format { .. })));
        std::fs::write(&path, b"nope").unwrap();
        assert!(KernelTable::load(&path, &cfg).is_err());
    }
}
