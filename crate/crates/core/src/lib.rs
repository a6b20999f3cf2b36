//! Score-based generative modelling with jump-diffusion forward noise.
//!
//! The forward process is an Ornstein-Uhlenbeck process driven by Gaussian
//! noise plus compound-Poisson jumps with isotropic multivariate Laplace
//! amplitudes. The crate covers the whole pipeline:
//!
//! - [`special_math`]: Bessel functions, Gauss-Legendre quadrature, seeded RNG
//!   streams and the primitive samplers.
//! - [`levy_noise`]: characteristic exponents and exact samplers for the noise,
//!   the stationary law and the alpha-stable target data.
//! - [`kernels`]: the radial propagator and generalized-score kernels, their
//!   tabulation, interpolation and persistence.
//! - [`score_model`]: the tanh MLP approximating the generalized score, with
//!   analytic gradients and an Adam optimizer.
//! - [`training`]: exact forward sampling and denoising score matching.
//! - [`generation`]: exponential-integrator ODE and SDE samplers.
//! - [`evaluation`]: empirical quantiles, the tail MSLE metric and the
//!   multi-run benchmark harness.
//! - [`cli`]: the `jdgen` command line.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod generation;
pub mod kernels;
pub mod levy_noise;
pub mod score_model;
pub mod special_math;
pub mod training;

pub use config::ModelConfig;
pub use dataset::SampleBatch;
pub use error::{Error, Result};
