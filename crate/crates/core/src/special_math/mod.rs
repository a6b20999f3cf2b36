//! Foundational numerics shared by every other module.

mod bessel;
mod fast_tanh;
mod quadrature;
mod rng;
mod sampling;

pub use bessel::{bessel_j, bessel_pair, MAX_BESSEL_ORDER};
pub use fast_tanh::{tanh, tanh_in_place};
pub use quadrature::{integrate, QuadratureRule};
pub use rng::{derive_seed, RngStream};
pub use sampling::{sample_exp1, sample_gamma, sample_normal_vec, sample_poisson, sample_uniform};
