//! Process parameters and the aggregate run configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::ExperimentConfig;
use crate::special_math::MAX_BESSEL_ORDER;
use crate::training::TrainConfig;

/// Nodes per Gauss-Legendre panel in the kernel quadrature.
pub const QUAD_PANEL_ORDER: usize = 20;

/// Largest supported dimension; the radial kernels need `J_{d/2}`.
pub const MAX_DIM: usize = 2 * MAX_BESSEL_ORDER as usize;

/// Scalar parameters of the forward process, its kernel tables and the
/// generative discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Gaussian diffusion intensity `D`.
    #[serde(rename = "D")]
    pub diffusion: f64,
    /// Jump rate per unit time.
    #[serde(rename = "lambda")]
    pub jump_rate: f64,
    /// Laplace amplitude scale `sigma^2`.
    pub sigma2: f64,
    /// Horizon `T` of the forward process.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Generation step.
    pub dt: f64,
    /// Sample-space dimension.
    #[serde(rename = "d")]
    pub dim: usize,
    /// Smallest tabulated and trained time.
    pub t_min: f64,
    /// Radial cutoff of the kernel table.
    pub x_max: f64,
    /// Grid points per table axis.
    pub n_grid: usize,
    /// Truncation of the wavenumber integrals.
    pub k_max: f64,
    /// Total quadrature nodes on `[0, k_max]`.
    pub n_quad: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            diffusion: 1.0,
            jump_rate: 1.0,
            sigma2: 2.0,
            horizon: 10.0,
            dt: 0.1,
            dim: 2,
            t_min: 0.05,
            x_max: 10.0,
            n_grid: 200,
            k_max: 50.0,
            n_quad: 2000,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("D", self.diffusion)?;
        positive("sigma2", self.sigma2)?;
        positive("T", self.horizon)?;
        positive("dt", self.dt)?;
        positive("t_min", self.t_min)?;
        positive("x_max", self.x_max)?;
        positive("k_max", self.k_max)?;
        if !(self.jump_rate >= 0.0) || !self.jump_rate.is_finite() {
            return Err(Error::param("lambda", format!("must be non-negative, got {}", self.jump_rate)));
        }
        if self.dim == 0 || !self.dim.is_multiple_of(2) || self.dim > MAX_DIM {
            return Err(Error::param("d", format!("must be even and at most {MAX_DIM}, got {}", self.dim)));
        }
        if self.t_min >= self.horizon {
            return Err(Error::param("t_min", format!("{} must be below T = {}", self.t_min, self.horizon)));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(Error::param("dt", format!("{} does not divide T = {}", self.dt, self.horizon)));
        }
        if self.n_grid < 2 {
            return Err(Error::param("n_grid", "need at least two grid points"));
        }
        if self.n_quad == 0 || !self.n_quad.is_multiple_of(QUAD_PANEL_ORDER) {
            return Err(Error::param(
                "n_quad",
                format!("must be a positive multiple of {QUAD_PANEL_ORDER}, got {}", self.n_quad),
            ));
        }
        Ok(())
    }

    /// Number of generation steps `T / dt`.
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Everything a pipeline run needs, as read from the JSON config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.experiment.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}
