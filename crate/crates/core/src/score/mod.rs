//! Noise schedule, score-function contract, analytic scores and the trainable
//! denoiser.

mod checkpoint;
mod gmm;
mod model;
mod train;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::real::Real;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gmm::{GaussianMixturePrior, MixtureComponent, MixtureMean};
pub use model::{Architecture, DenoiserModel, Preconditioning};
pub use train::{dsm_loss, dsm_train, Adam, TrainConfig, TrainReport};

/// Geometric VE noise levels `sigma_i = sigma_min (sigma_max/sigma_min)^(i/(T-1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub n_steps: usize,
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, n_steps: usize) -> Result<Self> {
        let s = Self {
            sigma_min,
            sigma_max,
            n_steps,
        };
        s.validate()?;
        Ok(s)
    }

    /// `0.01 .. 378` over 2000 steps.
    pub fn wide() -> Self {
        Self {
            sigma_min: 0.01,
            sigma_max: 378.0,
            n_steps: 2000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(invalid("noise schedule", "sigma_min must be positive"));
        }
        if !(self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(invalid("noise schedule", "sigma_max must exceed sigma_min"));
        }
        if self.n_steps < 2 {
            return Err(invalid("noise schedule", "at least two steps are needed"));
        }
        Ok(())
    }

    /// Endpoints are returned exactly.
    pub fn sigma_at(&self, i: usize) -> Result<f64> {
        if i >= self.n_steps {
            return Err(Error::OutOfRange {
                index: i,
                len: self.n_steps,
            });
        }
        Ok(if i == 0 {
            self.sigma_min
        } else if i + 1 == self.n_steps {
            self.sigma_max
        } else {
            let f = i as f64 / (self.n_steps - 1) as f64;
            self.sigma_min * (self.sigma_max / self.sigma_min).powf(f)
        })
    }

    pub fn sigmas(&self) -> Vec<f64> {
        (0..self.n_steps).map(|i| self.sigma_at(i).expect("in range")).collect()
    }
}

/// Discrete step together with its noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevel {
    pub step: usize,
    pub sigma: f64,
}

/// `s(x, t) ≈ ∇ₓ log p_t(x)`.
pub trait ScoreFunction<T: Real>: Send + Sync {
    fn score(&self, x: &Image<T>, level: NoiseLevel) -> Result<Image<T>>;
}

/// Score that is identically zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroScore;

impl<T: Real> ScoreFunction<T> for ZeroScore {
    fn score(&self, x: &Image<T>, _level: NoiseLevel) -> Result<Image<T>> {
        Ok(Image::zeros(x.grid))
    }
}
