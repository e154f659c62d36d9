//! Multi-channel predictor–corrector sampling with SIRT data consistency.

mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classical::{sirt_step, weighted_mean};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Image, ImageGrid, Projector, SirtWeights, Sinogram};
use crate::metrics::{psnr, ssim};
use crate::real::{norm2, Real};
use crate::score::{NoiseLevel, NoiseSchedule, ScoreFunction};

pub use trace::{ReconTrace, TraceRecord};

/// How the data-consistent iterate is blended with the generative one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    /// `x = (x_dc + beta u) / (1 + beta)`, the minimizer of
    /// `|x - x_dc|² + beta |x - u|²`.
    #[default]
    Proximal,
    /// `x = x_dc + beta (x_dc - u)`.
    Literal,
}

/// Which state the SIRT sweeps start from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DcStart {
    /// The generative iterate `u` of the current step.
    #[default]
    Generative,
    /// The state `x` the step started from.
    Previous,
}

/// Predictor–corrector settings shared by the standalone sampler and DOSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    /// Target signal-to-noise ratio `r` of the corrector step size.
    pub corrector_snr: f64,
    pub n_corrector_steps: usize,
    /// When false the initial state is zero and no Gaussian noise is drawn.
    pub noise_injection: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: NoiseSchedule::wide(),
            corrector_snr: 0.16,
            n_corrector_steps: 1,
            noise_injection: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(self.corrector_snr > 0.0 && self.corrector_snr.is_finite()) {
            return Err(invalid("sampler config", "corrector_snr must be positive"));
        }
        Ok(())
    }

    /// `sigma_i`, with `sigma_{-1} = 0`.
    fn sigma(&self, i: isize) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.schedule.sigma_at(i as usize).expect("step in range")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosmConfig {
    pub n_channels: usize,
    /// SIRT iterations per outer step.
    pub dc_inner_iters: usize,
    pub beta: f64,
    #[serde(flatten)]
    pub sampler: SamplerConfig,
    /// Channel weights; uniform when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub coupling: Coupling,
    #[serde(default)]
    pub dc_start: DcStart,
    pub seed: u64,
}

impl Default for DosmConfig {
    fn default() -> Self {
        Self {
            n_channels: 5,
            dc_inner_iters: 20,
            beta: 0.1,
            sampler: SamplerConfig::default(),
            weights: None,
            coupling: Coupling::Proximal,
            dc_start: DcStart::Generative,
            seed: 0,
        }
    }
}

impl DosmConfig {
    /// Defaults with a 200-step schedule.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.sampler.schedule.n_steps = 200;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.n_channels == 0 {
            return Err(invalid("dosm config", "n_channels must be >= 1"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("dosm config", "beta must be finite and >= 0"));
        }
        self.channel_weights()?;
        Ok(())
    }

    pub fn channel_weights(&self) -> Result<Vec<f64>> {
        match &self.weights {
            None => Ok(vec![1.0 / self.n_channels as f64; self.n_channels]),
            Some(w) if w.len() != self.n_channels => Err(invalid(
                "dosm config",
                format!("{} weights for {} channels", w.len(), self.n_channels),
            )),
            Some(w) => {
                check_weights(w)?;
                Ok(w.clone())
            }
        }
    }
}

fn check_weights(w: &[f64]) -> Result<()> {
    if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("channel weights", "weights must be finite and >= 0"));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(invalid("channel weights", format!("weights sum to {total}")));
    }
    Ok(())
}

/// Per-channel states `x`, generative iterates `u` and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEnsemble<T> {
    pub x: Vec<Image<T>>,
    pub u: Vec<Image<T>>,
    pub weights: Vec<T>,
}

impl<T: Real> ChannelEnsemble<T> {
    /// `u` starts as a copy of `x`.
    pub fn new(x: Vec<Image<T>>, weights: Vec<T>) -> Result<Self> {
        let e = Self {
            u: x.clone(),
            x,
            weights,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn uniform(x: Vec<Image<T>>) -> Result<Self> {
        let n = x.len().max(1);
        Self::new(x, vec![T::of(1.0 / n as f64); n])
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .x
            .first()
            .ok_or_else(|| invalid("ensemble", "no channels"))?;
        if self.u.len() != self.x.len() || self.weights.len() != self.x.len() {
            return Err(Error::Shape("ensemble channel counts differ".into()));
        }
        for img in self.x.iter().chain(&self.u) {
            first.same_grid(img)?;
        }
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        // f32 weights of 1/N do not sum to one exactly
        let tol = if T::DTYPE == "float32" { 1e-6 } else { 1e-9 };
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || (w.iter().sum::<f64>() - 1.0).abs() > tol {
            return Err(invalid("ensemble", "weights must be >= 0 and sum to 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn grid(&self) -> ImageGrid {
        self.x[0].grid
    }
}

/// `sum_n w_n x_n`.
pub fn estimate_x0<T: Real>(ens: &ChannelEnsemble<T>) -> Result<Image<T>> {
    weighted_mean(&ens.x, &ens.weights)
}

fn gaussian<T: Real>(grid: ImageGrid, rng: &mut ChaCha20Rng) -> Image<T> {
    Image {
        grid,
        values: (0..grid.len())
            .map(|_| T::of(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    }
}

/// Independent stream `channel` of the master seed.
pub fn channel_rng(seed: u64, channel: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(channel as u64);
    rng
}

fn level(cfg: &SamplerConfig, i: usize) -> NoiseLevel {
    NoiseLevel {
        step: i,
        sigma: cfg.sigma(i as isize),
    }
}

/// Reverse-diffusion predictor on every channel, writing `ens.u`:
/// `u = x + (σ_i² - σ_{i-1}²) s(x, i) + sqrt(σ_i² - σ_{i-1}²) z`.
/// Channel `n` draws from `rngs[n]`, so the result does not depend on the
/// thread count.
pub fn predictor_step<T: Real>(
    ens: &mut ChannelEnsemble<T>,
    i: usize,
    score: &dyn ScoreFunction<T>,
    cfg: &SamplerConfig,
    rngs: &mut [ChaCha20Rng],
) -> Result<()> {
    let (hi, lo) = (cfg.sigma(i as isize), cfg.sigma(i as isize - 1));
    let delta = hi * hi - lo * lo;
    let out: Vec<Result<Image<T>>> = ens
        .x
        .par_iter()
        .zip(rngs.par_iter_mut())
        .map(|(x, rng)| {
            let s = score.score(x, level(cfg, i))?;
            s.check_finite("score")?;
            let mut u = x.clone();
            u.axpy(T::of(delta), &s);
            if cfg.noise_injection {
                let z = gaussian::<T>(x.grid, rng);
                u.axpy(T::of(delta.sqrt()), &z);
            }
            Ok(u)
        })
        .collect();
    for (slot, u) in ens.u.iter_mut().zip(out) {
        *slot = u?;
    }
    Ok(())
}

/// Langevin corrector on `ens.u`: `u += eps s(u, i) + sqrt(2 eps) z`, with
/// the step size `eps = 2 (r |z| / |s|)²` shared by all channels and the
/// norms averaged over channels. Returns the number of skipped steps, which
/// happen when every score vanishes.
pub fn corrector_step<T: Real>(
    ens: &mut ChannelEnsemble<T>,
    i: usize,
    score: &dyn ScoreFunction<T>,
    cfg: &SamplerConfig,
    rngs: &mut [ChaCha20Rng],
) -> Result<usize> {
    let mut skips = 0;
    for _ in 0..cfg.n_corrector_steps {
        let draws: Vec<Result<(Image<T>, Image<T>)>> = ens
            .u
            .par_iter()
            .zip(rngs.par_iter_mut())
            .map(|(u, rng)| {
                let z = if cfg.noise_injection {
                    gaussian::<T>(u.grid, rng)
                } else {
                    Image::zeros(u.grid)
                };
                let s = score.score(u, level(cfg, i))?;
                s.check_finite("score")?;
                Ok((z, s))
            })
            .collect();
        let draws: Vec<(Image<T>, Image<T>)> = draws.into_iter().collect::<Result<_>>()?;
        let n = draws.len() as f64;
        let z_norm = draws.iter().map(|(z, _)| z.norm().as_f64()).sum::<f64>() / n;
        let s_norm = draws.iter().map(|(_, s)| s.norm().as_f64()).sum::<f64>() / n;
        if s_norm == 0.0 {
            skips += 1;
            continue;
        }
        let ratio = cfg.corrector_snr * z_norm / s_norm;
        let eps = 2.0 * ratio * ratio;
        let (a, b) = (T::of(eps), T::of((2.0 * eps).sqrt()));
        ens.u.par_iter_mut().zip(&draws).for_each(|(u, (z, s))| {
            u.axpy(a, s);
            u.axpy(b, z);
        });
    }
    Ok(skips)
}

/// `k` SIRT iterations on `ens.x` against the weighted mean. Returns the
/// residual norm before each iteration.
pub fn data_consistency_sweep<T: Real>(
    ens: &mut ChannelEnsemble<T>,
    y: &Sinogram<T>,
    sw: &SirtWeights<T>,
    projector: &Projector,
    k: usize,
) -> Result<Vec<T>> {
    (0..k)
        .map(|_| sirt_step(&mut ens.x, &ens.weights, y, sw, projector))
        .collect()
}

/// Blends `ens.x` (the data-consistent iterate) with `ens.u`.
pub fn coupling_step<T: Real>(ens: &mut ChannelEnsemble<T>, beta: f64, mode: Coupling) {
    if beta == 0.0 {
        return;
    }
    let b = T::of(beta);
    let inv = T::of(1.0 / (1.0 + beta));
    for (x, u) in ens.x.iter_mut().zip(&ens.u) {
        for (xv, &uv) in x.values.iter_mut().zip(&u.values) {
            *xv = match mode {
                Coupling::Proximal => (*xv + b * uv) * inv,
                Coupling::Literal => *xv + b * (*xv - uv),
            };
        }
    }
}

fn at_step(step: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::AtStep {
        step,
        source: Box::new(e),
    }
}

/// Plain VE predictor–corrector sampling of `n_chains` chains from
/// `N(0, σ_max²)`; chain `n` uses stream `n` of `seed`.
pub fn pc_sample<T: Real>(
    score: &dyn ScoreFunction<T>,
    grid: ImageGrid,
    cfg: &SamplerConfig,
    seed: u64,
    n_chains: usize,
) -> Result<Vec<Image<T>>> {
    cfg.validate()?;
    let mut rngs: Vec<ChaCha20Rng> = (0..n_chains).map(|n| channel_rng(seed, n)).collect();
    let x0: Vec<Image<T>> = rngs.iter_mut().map(|r| initial_state(grid, cfg, r)).collect();
    let mut ens = ChannelEnsemble::uniform(x0)?;
    for i in (0..cfg.schedule.n_steps).rev() {
        predictor_step(&mut ens, i, score, cfg, &mut rngs).map_err(at_step(i))?;
        corrector_step(&mut ens, i, score, cfg, &mut rngs).map_err(at_step(i))?;
        for u in &ens.u {
            u.check_finite("sample").map_err(at_step(i))?;
        }
        std::mem::swap(&mut ens.x, &mut ens.u);
    }
    Ok(ens.x)
}

fn initial_state<T: Real>(grid: ImageGrid, cfg: &SamplerConfig, rng: &mut ChaCha20Rng) -> Image<T> {
    if cfg.noise_injection {
        let sigma_max = T::of(cfg.schedule.sigma_max);
        gaussian::<T>(grid, rng).map(|v| v * sigma_max)
    } else {
        Image::zeros(grid)
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct DosmRun<T> {
    pub estimate: Image<T>,
    pub trace: ReconTrace,
    pub ensemble: ChannelEnsemble<T>,
}

/// [`run`] without the final ensemble.
pub fn reconstruct<T: Real>(
    y: &Sinogram<T>,
    projector: &Projector,
    score: &dyn ScoreFunction<T>,
    cfg: &DosmConfig,
    truth: Option<&Image<T>>,
) -> Result<(Image<T>, ReconTrace)> {
    let r = run(y, projector, score, cfg, truth)?;
    Ok((r.estimate, r.trace))
}

/// Full reconstruction. Each outer step runs predictor and corrector on
/// every channel, the SIRT sweeps, then the coupling, and appends one trace
/// record. Metrics are traced when `truth` is given.
pub fn run<T: Real>(
    y: &Sinogram<T>,
    projector: &Projector,
    score: &dyn ScoreFunction<T>,
    cfg: &DosmConfig,
    truth: Option<&Image<T>>,
) -> Result<DosmRun<T>> {
    cfg.validate()?;
    y.check_shape()?;
    if y.geometry != *projector.geometry() {
        return Err(Error::Shape("sinogram does not match the projector".into()));
    }
    let grid = *projector.grid();
    if let Some(t) = truth {
        if t.grid != grid {
            return Err(Error::Shape("ground truth grid differs from projector grid".into()));
        }
    }
    let sc = &cfg.sampler;
    let mut rngs: Vec<ChaCha20Rng> = (0..cfg.n_channels).map(|n| channel_rng(cfg.seed, n)).collect();
    let x0: Vec<Image<T>> = rngs.iter_mut().map(|r| initial_state(grid, sc, r)).collect();
    let weights = cfg.channel_weights()?.into_iter().map(T::of).collect();
    let mut ens = ChannelEnsemble::new(x0, weights)?;
    let sw = projector.sirt_weights::<T>();
    let range = truth.map(|t| {
        let (lo, hi) = t.min_max();
        (hi - lo).as_f64()
    });
    let mut trace = ReconTrace::default();
    let mut ax = vec![T::zero(); y.values.len()];
    for i in (0..sc.schedule.n_steps).rev() {
        predictor_step(&mut ens, i, score, sc, &mut rngs).map_err(at_step(i))?;
        let skips = corrector_step(&mut ens, i, score, sc, &mut rngs).map_err(at_step(i))?;
        if cfg.dc_start == DcStart::Generative {
            ens.x.clone_from(&ens.u);
        }
        data_consistency_sweep(&mut ens, y, &sw, projector, cfg.dc_inner_iters).map_err(at_step(i))?;
        coupling_step(&mut ens, cfg.beta, cfg.coupling);

        let est = estimate_x0(&ens)?;
        est.check_finite("channel estimate").map_err(at_step(i))?;
        projector.forward_into(&est.values, &mut ax);
        let r: Vec<T> = y.values.iter().zip(&ax).map(|(&a, &b)| a - b).collect();
        let (p, s) = match (truth, range) {
            (Some(t), Some(dr)) => (
                Some(psnr(&est, t, dr).map_err(at_step(i))?),
                ssim(&est, t, dr).ok(),
            ),
            _ => (None, None),
        };
        trace.records.push(TraceRecord {
            step: i,
            sigma: sc.sigma(i as isize),
            residual: norm2(&r).as_f64(),
            psnr: p,
            ssim: s,
            corrector_skips: skips,
            channel_norms: ens.x.iter().map(|x| x.norm().as_f64()).collect(),
        });
    }
    Ok(DosmRun {
        estimate: estimate_x0(&ens)?,
        trace,
        ensemble: ens,
    })
}
