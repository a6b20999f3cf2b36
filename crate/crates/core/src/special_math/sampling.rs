//! Primitive random variates. The distributions come from `rand_distr`; this
//! module adds parameter validation and a uniform calling convention.

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};

use crate::error::{Error, Result};

/// Standard Gamma variate with the given shape and unit scale.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(Error::param("shape", format!("must be positive, got {shape}")));
    }
    let gamma = Gamma::new(shape, 1.0).map_err(|e| Error::param("shape", e.to_string()))?;
    Ok(gamma.sample(rng))
}

/// `dim` i.i.d. zero-mean Gaussian components with the given variance.
pub fn sample_normal_vec<R: Rng + ?Sized>(dim: usize, variance: f64, rng: &mut R) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::param("variance", format!("must be positive, got {variance}")));
    }
    let sd = variance.sqrt();
    Ok((0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
        .collect())
}

/// Poisson count with the given mean; a zero mean always yields zero.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if mean == 0.0 {
        return Ok(0);
    }
    let poisson = Poisson::new(mean).map_err(|e| Error::param("mean", e.to_string()))?;
    Ok(poisson.sample(rng) as u64)
}

pub fn sample_exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Uniform on `[lo, hi)`.
pub fn sample_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
