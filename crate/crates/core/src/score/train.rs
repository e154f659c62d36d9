use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::{ChaCha20Rng, ChaCha8Rng};
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DenoiserModel, NoiseSchedule};
use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::real::Real;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grad: &[f64]) {
        self.t += 1;
        let b1 = 1.0 - self.beta1.powi(self.t);
        let b2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let upd = self.lr * (*m / b1) / ((*v / b2).sqrt() + self.eps);
            *p = T::of(p.as_f64() - upd);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Square random crops of this side; whole images when absent.
    #[serde(default)]
    pub crop: Option<usize>,
    /// Global gradient-norm clip.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Cosine-anneal the learning rate down to this value over the run.
    #[serde(default)]
    pub final_learning_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            learning_rate: 2e-4,
            seed: 0,
            crop: None,
            grad_clip: Some(1.0),
            final_learning_rate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-sample loss of every epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// One training example: crop origin, noise step, and a seed for its noise.
#[derive(Clone, Copy)]
struct Draw {
    image: usize,
    y0: usize,
    x0: usize,
    step: usize,
    noise_seed: u64,
}

/// Weighted score-matching loss of one noisy sample and its gradient.
///
/// For `x = x0 + sigma z` the score target is `-z / sigma`; the weight
/// `sigma⁴ / c_out²` turns `||s - target||²` into `||F - F_target||²`, which
/// keeps every noise level's contribution of order one. Returns the mean
/// over pixels.
pub fn dsm_loss<T: Real>(
    model: &DenoiserModel<T>,
    clean: &[T],
    noise: &[T],
    h: usize,
    w: usize,
    sigma: f64,
    grad: Option<&mut [T]>,
) -> f64 {
    let pc = model.precond(sigma);
    let n = clean.len() as f64;
    let noisy: Vec<T> = clean.iter().zip(noise).map(|(&c, &z)| c + T::of(sigma) * z).collect();
    let scaled: Vec<T> = noisy.iter().map(|&v| v * T::of(pc.c_in)).collect();
    let cache = model.forward(&scaled, h, w, pc.c_noise);
    let mut loss = 0.0;
    let mut d_out = Vec::with_capacity(clean.len());
    for ((&f, &c), &x) in cache.out.iter().zip(clean).zip(&noisy) {
        let target = (c.as_f64() - pc.c_skip * x.as_f64()) / pc.c_out;
        let e = f.as_f64() - target;
        loss += e * e;
        d_out.push(T::of(2.0 * e / n));
    }
    if let Some(g) = grad {
        model.backward(&cache, &d_out, g);
    }
    loss / n
}

/// Denoising score matching with Adam. Noise steps are drawn uniformly from
/// the schedule; per-sample gradients are computed in parallel and summed in
/// sample order.
pub fn dsm_train<T: Real>(
    model: &mut DenoiserModel<T>,
    data: &[Image<T>],
    schedule: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let first = data.first().ok_or_else(|| invalid("training set", "empty"))?;
    for img in data {
        first.same_grid(img)?;
    }
    schedule.validate()?;
    if cfg.batch_size == 0 {
        return Err(invalid("train config", "batch_size must be >= 1"));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(invalid("train config", "learning rate must be finite and >= 0"));
    }
    if let Some(lo) = cfg.final_learning_rate {
        if !(lo >= 0.0 && lo.is_finite()) {
            return Err(invalid("train config", "final learning rate must be finite and >= 0"));
        }
    }
    let (ny, nx) = (first.grid.ny, first.grid.nx);
    let (ch, cw) = match cfg.crop {
        Some(c) if c == 0 || c > nx || c > ny => {
            return Err(invalid("train config", format!("crop {c} does not fit {nx}x{ny}")))
        }
        Some(c) => (c, c),
        None => (ny, nx),
    };
    let sigmas = schedule.sigmas();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.params.len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    let total_steps = cfg.epochs * data.len().div_ceil(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let draws: Vec<Draw> = batch
                .iter()
                .map(|&image| Draw {
                    image,
                    y0: rng.random_range(0..=ny - ch),
                    x0: rng.random_range(0..=nx - cw),
                    step: rng.random_range(0..sigmas.len()),
                    noise_seed: rng.random(),
                })
                .collect();
            let per_sample: Vec<(f64, Vec<T>)> = draws
                .par_iter()
                .map(|d| {
                    let src = &data[d.image].values;
                    let clean: Vec<T> = (0..ch)
                        .flat_map(|r| src[(d.y0 + r) * nx + d.x0..][..cw].iter().copied())
                        .collect();
                    let mut nrng = ChaCha8Rng::seed_from_u64(d.noise_seed);
                    let noise: Vec<T> = (0..clean.len())
                        .map(|_| T::of(nrng.sample::<f64, _>(StandardNormal)))
                        .collect();
                    let mut g = vec![T::zero(); model.params.len()];
                    let l = dsm_loss(model, &clean, &noise, ch, cw, sigmas[d.step], Some(&mut g));
                    (l, g)
                })
                .collect();
            let mut grad = vec![0.0f64; model.params.len()];
            let scale = 1.0 / per_sample.len() as f64;
            for (l, g) in &per_sample {
                if !l.is_finite() {
                    return Err(Error::Diverged(format!("non-finite loss in epoch {epoch}")));
                }
                total += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b.as_f64() * scale);
            }
            if let Some(clip) = cfg.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > clip {
                    grad.iter_mut().for_each(|g| *g *= clip / norm);
                }
            }
            if let Some(lo) = cfg.final_learning_rate {
                let f = steps as f64 / total_steps.max(1) as f64;
                opt.lr = lo + 0.5 * (cfg.learning_rate - lo) * (1.0 + (std::f64::consts::PI * f).cos());
            }
            opt.step(&mut model.params, &grad);
            steps += 1;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged(format!("training diverged in epoch {epoch}")));
        }
        epoch_losses.push(mean);
    }
    Ok(TrainReport { epoch_losses, steps })
}
