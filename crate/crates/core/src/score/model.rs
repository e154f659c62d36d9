use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{NoiseLevel, ScoreFunction};
use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::real::Real;

/// Input planes: the scaled image and a constant plane holding `c_noise`.
const IN_PLANES: usize = 2;
const TAPS: usize = 9;

/// Stack of dilated 3x3 convolutions.
///
/// Layer 0 maps the two input planes to `channels` with a ReLU; middle
/// layers are residual (`h + relu(conv h)`); the last layer is linear with a
/// single output plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub channels: usize,
    pub dilations: Vec<usize>,
    /// Data scale used by the preconditioning.
    pub sigma_data: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: 16,
            dilations: vec![1, 2, 4, 8, 1],
            sigma_data: 0.5,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(invalid("architecture", "channels must be >= 1"));
        }
        if self.dilations.len() < 2 {
            return Err(invalid("architecture", "at least two layers are needed"));
        }
        if self.dilations.contains(&0) {
            return Err(invalid("architecture", "dilations must be >= 1"));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(invalid("architecture", "sigma_data must be positive"));
        }
        Ok(())
    }

    /// `(in, out, dilation)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize, usize)> {
        let last = self.dilations.len() - 1;
        self.dilations
            .iter()
            .enumerate()
            .map(|(l, &d)| {
                let cin = if l == 0 { IN_PLANES } else { self.channels };
                let cout = if l == last { 1 } else { self.channels };
                (cin, cout, d)
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|&(i, o, _)| o * i * TAPS + o).sum()
    }

    /// Side length of the square input patch that influences one output.
    pub fn receptive_field(&self) -> usize {
        1 + 2 * self.dilations.iter().sum::<usize>()
    }
}

/// Scalings that turn the raw network `F` into a denoiser
/// `D(x) = c_skip x + c_out F(c_in x, c_noise)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preconditioning {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Preconditioning {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let s2 = sigma * sigma;
        let d2 = sigma_data * sigma_data;
        Self {
            c_skip: d2 / (s2 + d2),
            c_out: sigma * sigma_data / (s2 + d2).sqrt(),
            c_in: 1.0 / (s2 + d2).sqrt(),
            c_noise: 0.25 * sigma.ln(),
        }
    }
}

/// Parametric score model: the score is `(D(x) - x) / sigma²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel<T> {
    pub arch: Architecture,
    pub params: Vec<T>,
}

/// Activations kept for the backward pass.
pub(crate) struct Cache<T> {
    h: usize,
    w: usize,
    /// im2col of every layer input
    cols: Vec<Vec<T>>,
    /// pre-activations of every layer
    pre: Vec<Vec<T>>,
    /// raw network output
    pub out: Vec<T>,
}

impl<T: Real> DenoiserModel<T> {
    /// He-normal weights, zero biases, zero last layer, so a fresh model
    /// denoises to `c_skip x`.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut params = vec![T::zero(); arch.n_params()];
        let layers = arch.layers();
        let mut off = 0;
        for (l, &(cin, cout, _)) in layers.iter().enumerate() {
            let nw = cout * cin * TAPS;
            if l + 1 < layers.len() {
                let std = (2.0 / (cin * TAPS) as f64).sqrt();
                for p in &mut params[off..off + nw] {
                    let z: f64 = rng.sample(StandardNormal);
                    *p = T::of(std * z);
                }
            }
            off += nw + cout;
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::Shape(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                arch.n_params()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { arch, params })
    }

    pub fn cast<U: Real>(&self) -> DenoiserModel<U> {
        DenoiserModel {
            arch: self.arch.clone(),
            params: self.params.iter().map(|p| U::of(p.as_f64())).collect(),
        }
    }

    pub fn precond(&self, sigma: f64) -> Preconditioning {
        Preconditioning::new(sigma, self.arch.sigma_data)
    }

    /// Raw network on an `h x w` image already scaled by `c_in`.
    pub(crate) fn forward(&self, scaled: &[T], h: usize, w: usize, c_noise: f64) -> Cache<T> {
        let hw = h * w;
        let mut act: Vec<T> = Vec::with_capacity(IN_PLANES * hw);
        act.extend_from_slice(scaled);
        act.extend(std::iter::repeat_n(T::of(c_noise), hw));
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        let mut cols = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(layers.len());
        let mut off = 0;
        for (l, &(cin, cout, d)) in layers.iter().enumerate() {
            let wts = &self.params[off..off + cout * cin * TAPS];
            let bias = &self.params[off + cout * cin * TAPS..off + cout * cin * TAPS + cout];
            off += cout * cin * TAPS + cout;
            let mut col = vec![T::zero(); cin * TAPS * hw];
            im2col(&act, cin, h, w, d, &mut col);
            let mut z = vec![T::zero(); cout * hw];
            for (o, zo) in z.chunks_mut(hw).enumerate() {
                zo.iter_mut().for_each(|v| *v = bias[o]);
            }
            T::gemm(cout, cin * TAPS, hw, T::one(), wts, false, &col, false, T::one(), &mut z);
            act = if l == last {
                z.clone()
            } else if l == 0 {
                z.iter().map(|&v| v.max(T::zero())).collect()
            } else {
                act.iter().zip(&z).map(|(&a, &v)| a + v.max(T::zero())).collect()
            };
            cols.push(col);
            pre.push(z);
        }
        Cache {
            h,
            w,
            cols,
            pre,
            out: act,
        }
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dF`.
    pub(crate) fn backward(&self, cache: &Cache<T>, d_out: &[T], grad: &mut [T]) {
        let hw = cache.h * cache.w;
        let layers = self.arch.layers();
        let last = layers.len() - 1;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(cin, cout, _) in &layers {
            offsets.push(off);
            off += cout * cin * TAPS + cout;
        }
        // gradient w.r.t. the current layer's output activation
        let mut d_act = d_out.to_vec();
        for l in (0..layers.len()).rev() {
            let (cin, cout, d) = layers[l];
            let off = offsets[l];
            let nw = cout * cin * TAPS;
            let d_z: Vec<T> = if l == last {
                d_act.clone()
            } else {
                d_act
                    .iter()
                    .zip(&cache.pre[l])
                    .map(|(&g, &z)| if z > T::zero() { g } else { T::zero() })
                    .collect()
            };
            let (gw, gb) = grad[off..off + nw + cout].split_at_mut(nw);
            T::gemm(cout, hw, cin * TAPS, T::one(), &d_z, false, &cache.cols[l], true, T::one(), gw);
            for (o, b) in gb.iter_mut().enumerate() {
                *b += d_z[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
            }
            if l == 0 {
                break;
            }
            let wts = &self.params[off..off + nw];
            let mut d_col = vec![T::zero(); cin * TAPS * hw];
            T::gemm(cin * TAPS, cout, hw, T::one(), wts, true, &d_z, false, T::zero(), &mut d_col);
            let mut d_in = if l == last {
                vec![T::zero(); cin * hw]
            } else {
                // residual path
                d_act.clone()
            };
            col2im_add(&d_col, cin, cache.h, cache.w, d, &mut d_in);
            d_act = d_in;
        }
    }

    /// `D(x)` for one `h x w` image.
    pub fn denoise(&self, x: &[T], h: usize, w: usize, sigma: f64) -> Vec<T> {
        let pc = self.precond(sigma);
        let scaled: Vec<T> = x.iter().map(|&v| v * T::of(pc.c_in)).collect();
        let cache = self.forward(&scaled, h, w, pc.c_noise);
        x.iter()
            .zip(&cache.out)
            .map(|(&xi, &f)| T::of(pc.c_skip) * xi + T::of(pc.c_out) * f)
            .collect()
    }

    /// `(D(x) - x) / sigma²`
    pub fn score_values(&self, x: &[T], h: usize, w: usize, sigma: f64) -> Vec<T> {
        let d = self.denoise(x, h, w, sigma);
        let inv = T::of(1.0 / (sigma * sigma));
        d.iter().zip(x).map(|(&di, &xi)| (di - xi) * inv).collect()
    }
}

impl<T: Real> ScoreFunction<T> for DenoiserModel<T> {
    fn score(&self, x: &Image<T>, level: NoiseLevel) -> Result<Image<T>> {
        if !(level.sigma > 0.0 && level.sigma.is_finite()) {
            return Err(invalid("noise level", format!("sigma {}", level.sigma)));
        }
        x.check_finite("score input")?;
        let s = self.score_values(&x.values, x.grid.ny, x.grid.nx, level.sigma);
        let img = Image {
            grid: x.grid,
            values: s,
        };
        img.check_finite("score output")?;
        Ok(img)
    }
}

/// `col[(c*9 + ky*3 + kx), y*w + x] = input[c, y + (ky-1)d, x + (kx-1)d]`,
/// zero outside the image.
fn im2col<T: Real>(input: &[T], c: usize, h: usize, w: usize, d: usize, col: &mut [T]) {
    let hw = h * w;
    let d = d as isize;
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ch * TAPS) + ky * 3 + kx) * hw..][..hw];
                let dy = (ky as isize - 1) * d;
                let dx = (kx as isize - 1) * d;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx.max(0)).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        dst.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    dst[..x0].iter_mut().for_each(|v| *v = T::zero());
                    dst[x1..].iter_mut().for_each(|v| *v = T::zero());
                    let sx0 = (x0 as isize + dx) as usize;
                    dst[x0..x1].copy_from_slice(&src[sx0..sx0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`], accumulated into `out`.
fn col2im_add<T: Real>(col: &[T], c: usize, h: usize, w: usize, d: usize, out: &mut [T]) {
    let hw = h * w;
    let d = d as isize;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((ch * TAPS) + ky * 3 + kx) * hw..][..hw];
                let dy = (ky as isize - 1) * d;
                let dx = (kx as isize - 1) * d;
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx.max(0)).max(0) as usize;
                if x0 >= x1 {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sx0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + sx0..][..x1 - x0];
                    for (o, &v) in dst.iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
}
