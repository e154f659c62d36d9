use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Image, ImageGrid, Projector, Sinogram};
use crate::metrics::psnr;
use crate::real::{dot, norm2, Real};

/// Inner dual iterations of the TV proximal solve.
pub const TV_PROX_ITERS: usize = 20;

const POWER_MAX_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-6;
/// Power iteration approaches `||A||²` from below.
const LIPSCHITZ_MARGIN: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    /// `1/L` with `L` from power iteration on `AᵀA`.
    #[default]
    Auto,
    /// Explicit `1/L`.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FistaConfig {
    pub lambda: f64,
    pub n_iters: usize,
    #[serde(default)]
    pub step: StepSize,
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 {
            return Err(invalid("fista config", "n_iters must be >= 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("fista config", format!("lambda {}", self.lambda)));
        }
        if let StepSize::Fixed(s) = self.step {
            if !(s > 0.0 && s.is_finite()) {
                return Err(invalid("fista config", format!("step {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FistaResult<T> {
    pub image: Image<T>,
    /// `F(x_k)` for `k = 0..=n_iters`, `x_0 = 0`.
    pub objective: Vec<f64>,
    pub step: f64,
}

/// Forward differences with zero flux across the last row and column.
pub fn gradient(x: &[f64], nx: usize, ny: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; x.len()];
    let mut gy = vec![0.0; x.len()];
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            if c + 1 < nx {
                gx[i] = x[i + 1] - x[i];
            }
            if r + 1 < ny {
                gy[i] = x[i + nx] - x[i];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
pub fn divergence(px: &[f64], py: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut d = vec![0.0; px.len()];
    for r in 0..ny {
        for c in 0..nx {
            let i = r * nx + c;
            let mut v = 0.0;
            if c + 1 < nx {
                v += px[i];
            }
            if c > 0 {
                v -= px[i - 1];
            }
            if r + 1 < ny {
                v += py[i];
            }
            if r > 0 {
                v -= py[i - nx];
            }
            d[i] = v;
        }
    }
    d
}

/// Isotropic total variation.
pub fn total_variation(x: &[f64], nx: usize, ny: usize) -> f64 {
    let (gx, gy) = gradient(x, nx, ny);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).sum()
}

/// `argmin_x ½||x - b||² + lam TV(x)` by the fast gradient projection on
/// the dual, `iters` iterations.
pub fn tv_prox(b: &[f64], nx: usize, ny: usize, lam: f64, iters: usize) -> Vec<f64> {
    if lam <= 0.0 {
        return b.to_vec();
    }
    let n = b.len();
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut rx, mut ry) = (vec![0.0; n], vec![0.0; n]);
    let mut t = 1.0f64;
    let primal = |qx: &[f64], qy: &[f64]| -> Vec<f64> {
        let d = divergence(qx, qy, nx, ny);
        b.iter().zip(&d).map(|(bi, di)| bi + lam * di).collect()
    };
    let step = 1.0 / (8.0 * lam);
    for _ in 0..iters {
        let x = primal(&rx, &ry);
        let (gx, gy) = gradient(&x, nx, ny);
        let (old_x, old_y) = (px.clone(), py.clone());
        for i in 0..n {
            let a = rx[i] + step * gx[i];
            let c = ry[i] + step * gy[i];
            let m = a.hypot(c).max(1.0);
            px[i] = a / m;
            py[i] = c / m;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for i in 0..n {
            rx[i] = px[i] + mom * (px[i] - old_x[i]);
            ry[i] = py[i] + mom * (py[i] - old_y[i]);
        }
        t = t_next;
    }
    primal(&px, &py)
}

/// Largest eigenvalue of `AᵀA`, from a deterministic start vector.
pub fn power_iteration(projector: &Projector) -> Result<f64> {
    let grid = projector.grid();
    let n = grid.len();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut ax = vec![0.0f64; projector.geometry().n_rays()];
    let mut w = vec![0.0f64; n];
    let mut est = 0.0f64;
    for _ in 0..POWER_MAX_ITERS {
        projector.forward_into(&v, &mut ax);
        projector.back_into(&ax, &mut w);
        let next = norm2(&w);
        if !(next > 0.0 && next.is_finite()) {
            return Err(Error::Diverged("power iteration hit a zero or non-finite vector".into()));
        }
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / next);
        if (next - est).abs() <= POWER_TOL * next {
            return Ok(next);
        }
        est = next;
    }
    Err(Error::Diverged(format!(
        "power iteration did not converge in {POWER_MAX_ITERS} iterations"
    )))
}

/// `½||y - Ax||² + lam TV(x)`.
pub fn objective(projector: &Projector, y: &[f64], x: &[f64], lam: f64) -> f64 {
    let grid = projector.grid();
    let mut ax = vec![0.0; y.len()];
    projector.forward_into(x, &mut ax);
    let r: Vec<f64> = ax.iter().zip(y).map(|(a, b)| a - b).collect();
    0.5 * dot(&r, &r) + lam * total_variation(x, grid.nx, grid.ny)
}

/// FISTA on `½||y - Ax||² + lambda TV(x)` from `x = 0`, with the TV prox
/// solved inexactly by [`tv_prox`].
pub fn fista_tv<T: Real>(y: &Sinogram<T>, projector: &Projector, cfg: &FistaConfig) -> Result<FistaResult<T>> {
    cfg.validate()?;
    y.check_shape()?;
    if y.geometry != *projector.geometry() {
        return Err(Error::Shape("sinogram does not match the projector".into()));
    }
    let grid: ImageGrid = *projector.grid();
    let yv: Vec<f64> = y.values.iter().map(|v| v.as_f64()).collect();
    if yv.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("FISTA data".into()));
    }
    let step = match cfg.step {
        StepSize::Fixed(s) => s,
        StepSize::Auto => 1.0 / (LIPSCHITZ_MARGIN * power_iteration(projector)?),
    };
    let n = grid.len();
    let mut x = vec![0.0f64; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut ax = vec![0.0f64; yv.len()];
    let mut g = vec![0.0f64; n];
    let mut history = vec![objective(projector, &yv, &x, cfg.lambda)];
    for k in 0..cfg.n_iters {
        projector.forward_into(&z, &mut ax);
        ax.iter_mut().zip(&yv).for_each(|(a, b)| *a -= b);
        projector.back_into(&ax, &mut g);
        let b: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi - step * gi).collect();
        let x_next = tv_prox(&b, grid.nx, grid.ny, cfg.lambda * step, TV_PROX_ITERS);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        for i in 0..n {
            z[i] = x_next[i] + mom * (x_next[i] - x[i]);
        }
        x = x_next;
        t = t_next;
        let f = objective(projector, &yv, &x, cfg.lambda);
        if !f.is_finite() {
            return Err(Error::Diverged(format!("FISTA objective non-finite at iteration {k}")));
        }
        history.push(f);
    }
    Ok(FistaResult {
        image: Image::from_vec(grid, x.into_iter().map(T::of).collect())?,
        objective: history,
        step,
    })
}

/// Outcome of a λ sweep scored against a reference image.
#[derive(Debug, Clone)]
pub struct LambdaSearch<T> {
    pub best_lambda: f64,
    pub best: FistaResult<T>,
    /// `(lambda, psnr)` for every candidate, in input order.
    pub scores: Vec<(f64, f64)>,
}

/// Runs [`fista_tv`] for every candidate λ and keeps the one with the best
/// PSNR against `truth`. Ties keep the earlier candidate.
pub fn fista_tv_search<T: Real>(
    y: &Sinogram<T>,
    projector: &Projector,
    cfg: &FistaConfig,
    lambdas: &[f64],
    truth: &Image<T>,
    data_range: f64,
) -> Result<LambdaSearch<T>> {
    if lambdas.is_empty() {
        return Err(invalid("lambda grid", "empty"));
    }
    // share the Lipschitz estimate across candidates
    let step = match cfg.step {
        StepSize::Auto => StepSize::Fixed(1.0 / (LIPSCHITZ_MARGIN * power_iteration(projector)?)),
        s => s,
    };
    let mut best: Option<(f64, f64, FistaResult<T>)> = None;
    let mut scores = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let res = fista_tv(y, projector, &FistaConfig { lambda, step, ..*cfg })?;
        let p = psnr(&res.image, truth, data_range)?;
        scores.push((lambda, p));
        if best.as_ref().is_none_or(|b| p > b.1) {
            best = Some((lambda, p, res));
        }
    }
    let (best_lambda, _, best) = best.expect("nonempty grid");
    Ok(LambdaSearch {
        best_lambda,
        best,
        scores,
    })
}

/// `count` values spaced geometrically over `[lo, hi]`.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64))
            .collect(),
    }
}
