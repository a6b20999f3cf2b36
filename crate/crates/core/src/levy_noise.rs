//! Characteristic exponents and exact samplers for the finite-activity Levy
//! noise: Gaussian increments plus compound-Poisson jumps whose amplitudes
//! follow the isotropic generalized Laplace law `GL(sigma^2, nu)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::special_math::{sample_exp1, sample_gamma, sample_poisson, sample_uniform};

/// Jump characteristic function minus one, `1 / (1 + sigma^2 k^2 / 2) - 1`.
pub fn phi_laplace(k: f64, sigma2: f64) -> f64 {
    1.0 / (1.0 + 0.5 * sigma2 * k * k) - 1.0
}

/// Characteristic exponent `psi(k) = (D/2) k^2 - lambda phi(k)`.
pub fn psi(k: f64, cfg: &ModelConfig) -> f64 {
    0.5 * cfg.diffusion * k * k - cfg.jump_rate * phi_laplace(k, cfg.sigma2)
}

/// `psi(k) / k^2` in the cancellation-free form
/// `D/2 + lambda sigma^2 / (2 (1 + sigma^2 k^2 / 2))`.
pub fn psi_over_k2(k: f64, cfg: &ModelConfig) -> f64 {
    0.5 * cfg.diffusion + 0.5 * cfg.jump_rate * cfg.sigma2 / (1.0 + 0.5 * cfg.sigma2 * k * k)
}

/// Weighting of the increments: `Minus` gives the forward-process increments
/// (`e^{-(t-s)/2}` kernel), `Plus` the generative-sampler increments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Minus,
    Plus,
}

/// Gaussian and jump parts of a noise increment over `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increment {
    pub gauss: Vec<f64>,
    pub jump: Vec<f64>,
}

fn add_scaled_normals<R: Rng + ?Sized>(out: &mut [f64], scale: f64, rng: &mut R) {
    for o in out {
        let z: f64 = StandardNormal.sample(rng);
        *o += scale * z;
    }
}

/// One `GL(sigma^2, nu)` draw `sqrt(Gamma) X` with `X ~ N(0, sigma^2 I)`.
pub fn sample_gl<R: Rng + ?Sized>(sigma2: f64, nu: f64, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::param("sigma2", format!("must be positive, got {sigma2}")));
    }
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::param("nu", format!("must be positive, got {nu}")));
    }
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    let gamma = sample_gamma(nu, rng)?;
    Ok(subordinated_gaussian(gamma, sigma2, d, rng))
}

fn subordinated_gaussian<R: Rng + ?Sized>(gamma: f64, sigma2: f64, d: usize, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; d];
    add_scaled_normals(&mut out, (gamma * sigma2).sqrt(), rng);
    out
}

/// Draws the increment over `[0, t]` into `gauss` and `jump` (overwritten).
///
/// `gauss ~ N(0, D(1 - e^{-t}) I)` for `Minus` and `N(0, D(e^t - 1) I)` for
/// `Plus`; `jump = sum_j A_j e^{+-(t - tau_j)/2}` with `M ~ Poisson(lambda t)`
/// jumps at uniform times and `A_j ~ GL(sigma^2, 1)`. Amplitudes with shape 1
/// use `Gamma(1) = Exp(1)`.
pub fn sample_increment_into<R: Rng + ?Sized>(
    t: f64,
    sign: Sign,
    cfg: &ModelConfig,
    rng: &mut R,
    gauss: &mut [f64],
    jump: &mut [f64],
) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::param("t", format!("must be positive, got {t}")));
    }
    let variance = match sign {
        Sign::Minus => -cfg.diffusion * (-t).exp_m1(),
        Sign::Plus => cfg.diffusion * t.exp_m1(),
    };
    gauss.fill(0.0);
    add_scaled_normals(gauss, variance.sqrt(), rng);

    jump.fill(0.0);
    let count = sample_poisson(cfg.jump_rate * t, rng)?;
    let direction = match sign {
        Sign::Minus => -0.5,
        Sign::Plus => 0.5,
    };
    for _ in 0..count {
        let tau = sample_uniform(0.0, t, rng);
        let gamma = sample_exp1(rng);
        let scale = (gamma * cfg.sigma2).sqrt() * (direction * (t - tau)).exp();
        add_scaled_normals(jump, scale, rng);
    }
    Ok(())
}

pub fn sample_increment<R: Rng + ?Sized>(t: f64, sign: Sign, cfg: &ModelConfig, rng: &mut R) -> Result<Increment> {
    let mut inc = Increment { gauss: vec![0.0; cfg.dim], jump: vec![0.0; cfg.dim] };
    sample_increment_into(t, sign, cfg, rng, &mut inc.gauss, &mut inc.jump)?;
    Ok(inc)
}

/// Stationary law `Z1 + sqrt(Gamma) Z2`, `Z1 ~ N(0, D I)`, `Z2 ~ N(0, sigma^2 I)`,
/// `Gamma ~ Gamma(lambda)`; pure `N(0, D I)` when `lambda = 0`.
pub fn sample_stationary_into<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R, out: &mut [f64]) {
    out.fill(0.0);
    add_scaled_normals(out, cfg.diffusion.sqrt(), rng);
    if cfg.jump_rate > 0.0 {
        let gamma = sample_gamma(cfg.jump_rate, rng).expect("jump rate checked positive");
        add_scaled_normals(out, (gamma * cfg.sigma2).sqrt(), rng);
    }
}

pub fn sample_stationary<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; cfg.dim];
    sample_stationary_into(cfg, rng, &mut out);
    out
}

/// Isotropic alpha-stable vector with characteristic function `exp(-|k|^alpha)`.
///
/// Sub-Gaussian construction `sqrt(2A) Z` with `Z ~ N(0, I)` and `A` a totally
/// skewed positive `(alpha/2)`-stable variable with Laplace transform
/// `exp(-s^{alpha/2})`, drawn with the Chambers-Mallows-Stuck (Kanter) formula.
pub fn sample_alpha_stable_isotropic<R: Rng + ?Sized>(alpha: f64, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::param("alpha", format!("must lie in (0, 2], got {alpha}")));
    }
    if d == 0 {
        return Err(Error::param("d", "must be at least 1"));
    }
    let a = 0.5 * alpha;
    let subordinator = if a == 1.0 { 1.0 } else { positive_stable(a, rng) };
    let mut out = vec![0.0; d];
    add_scaled_normals(&mut out, (2.0 * subordinator).sqrt(), rng);
    Ok(out)
}

/// Positive stable variable of index `a in (0, 1)` with `E e^{-sA} = e^{-s^a}`.
fn positive_stable<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    // U uniform on (0, pi), open at both ends.
    let u = loop {
        let u = std::f64::consts::PI * rng.random::<f64>();
        if u > 0.0 {
            break u;
        }
    };
    let w = sample_exp1(rng);
    (a * u).sin() / u.sin().powf(1.0 / a) * ((1.0 - a) * u).sin().powf((1.0 - a) / a) / w.powf((1.0 - a) / a)
}
