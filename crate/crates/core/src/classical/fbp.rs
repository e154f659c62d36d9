use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{invalid, Result};
use crate::geometry::{DetectorShape, Image, ImageGrid, ScanMode, Sinogram};
use crate::real::Real;

/// Filtered back projection.
///
/// Parallel data get the plain Ram-Lak filter. Equiangular fan data use the
/// cosine pre-weight and the fan-adapted kernel `-1/(2 pi^2 sin^2(n a))`;
/// flat panels are rescaled to a virtual detector through the rotation axis.
/// Back projection is pixel driven with linear interpolation.
pub fn fbp<T: Real>(sino: &Sinogram<T>, grid: &ImageGrid) -> Result<Image<T>> {
    sino.check_shape()?;
    grid.validate()?;
    let g = &sino.geometry;
    let n = g.n_detectors;
    if n < 2 {
        return Err(invalid("fbp input", "at least two detector elements are needed"));
    }
    let n_views = g.n_views();
    let r = g.source_to_center;
    let sdd = g.source_to_detector();

    // detector sample spacing seen by the filter (radians or mm)
    let (spacing, kernel_of): (f64, Box<dyn Fn(i64) -> f64>) = match (g.mode, g.detector) {
        (ScanMode::Fan, DetectorShape::Equiangular) => {
            let a = g.detector_pitch();
            (
                a,
                Box::new(move |k: i64| {
                    if k == 0 {
                        1.0 / (8.0 * a * a)
                    } else if k % 2 == 0 {
                        0.0
                    } else {
                        -1.0 / (2.0 * std::f64::consts::PI.powi(2) * (k as f64 * a).sin().powi(2))
                    }
                }),
            )
        }
        (ScanMode::Fan, DetectorShape::Flat) => {
            let a = g.detector_pitch() * r / sdd;
            (a, Box::new(move |k| 0.5 * ram_lak(k, a)))
        }
        (ScanMode::Parallel, _) => {
            let a = g.detector_pitch();
            (a, Box::new(move |k| ram_lak(k, a)))
        }
    };

    let pre_weight: Vec<f64> = (0..n)
        .map(|d| {
            let off = g.detector_offset(d);
            match (g.mode, g.detector) {
                (ScanMode::Fan, DetectorShape::Equiangular) => r * (off * spacing).cos(),
                (ScanMode::Fan, DetectorShape::Flat) => {
                    let p = off * spacing;
                    r / (r * r + p * p).sqrt()
                }
                (ScanMode::Parallel, _) => 1.0,
            }
        })
        .collect();

    let mut filtered = vec![0.0f64; n_views * n];
    let filter = RampFilter::new(n, &*kernel_of);
    for v in 0..n_views {
        let row: Vec<f64> = sino
            .view(v)
            .iter()
            .zip(&pre_weight)
            .map(|(&p, &w)| p.as_f64() * w)
            .collect();
        let out = &mut filtered[v * n..(v + 1) * n];
        filter.apply(&row, out);
        out.iter_mut().for_each(|q| *q *= spacing);
    }

    let d_beta = match g.mode {
        ScanMode::Parallel => std::f64::consts::PI / n_views as f64,
        ScanMode::Fan => std::f64::consts::TAU / n_views as f64,
    };
    let trig: Vec<(f64, f64)> = g.view_angles.iter().map(|b| b.sin_cos()).collect();
    let centre = 0.5 * n as f64 - 0.5;
    let interp = |q: &[f64], pos: f64| -> f64 {
        // pos in element units relative to element 0
        if !(pos > -1.0 && pos < n as f64) {
            return 0.0;
        }
        let i0 = pos.floor();
        let f = pos - i0;
        let i0 = i0 as i64;
        let at = |i: i64| if i >= 0 && (i as usize) < n { q[i as usize] } else { 0.0 };
        (1.0 - f) * at(i0) + f * at(i0 + 1)
    };

    let mut values = vec![T::zero(); grid.len()];
    values.par_chunks_mut(grid.nx).enumerate().for_each(|(row, out)| {
        for (col, o) in out.iter_mut().enumerate() {
            let [x, y] = grid.pixel_center(col, row);
            let mut acc = 0.0;
            for (v, &(s, c)) in trig.iter().enumerate() {
                let q = &filtered[v * n..(v + 1) * n];
                let along = x * c + y * s; // P . e
                let across = -x * s + y * c; // P . axis
                acc += match (g.mode, g.detector) {
                    (ScanMode::Parallel, _) => interp(q, across / spacing + centre),
                    (ScanMode::Fan, DetectorShape::Equiangular) => {
                        // ray from the source towards -e rotated by gamma
                        let dist = r - along;
                        let gamma = across.atan2(dist);
                        let l2 = dist * dist + across * across;
                        interp(q, gamma / spacing + centre) / l2
                    }
                    (ScanMode::Fan, DetectorShape::Flat) => {
                        let u = (r - along) / r;
                        let p = r * across / (r - along);
                        interp(q, p / spacing + centre) / (u * u)
                    }
                };
            }
            *o = T::of(acc * d_beta);
        }
    });
    Image::from_vec(*grid, values)
}

/// Spatial Ram-Lak kernel for sample spacing `a`.
pub fn ram_lak(k: i64, a: f64) -> f64 {
    if k == 0 {
        1.0 / (4.0 * a * a)
    } else if k % 2 == 0 {
        0.0
    } else {
        -1.0 / ((k as f64 * std::f64::consts::PI * a).powi(2))
    }
}

/// Linear convolution with a symmetric spatial kernel, evaluated through a
/// zero-padded power-of-two FFT.
pub struct RampFilter {
    n: usize,
    size: usize,
    kernel_hat: Vec<Complex<f64>>,
    fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl RampFilter {
    pub fn new(n: usize, kernel: &dyn Fn(i64) -> f64) -> Self {
        let size = (2 * n).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(size);
        let inv = planner.plan_fft_inverse(size);
        // circular layout: lag k at k, lag -k at size - k
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); size];
        for k in 0..n as i64 {
            kernel_hat[k as usize].re = kernel(k);
            if k > 0 {
                kernel_hat[size - k as usize].re = kernel(-k);
            }
        }
        fwd.process(&mut kernel_hat);
        Self {
            n,
            size,
            kernel_hat,
            fwd,
            inv,
        }
    }

    pub fn apply(&self, input: &[f64], out: &mut [f64]) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(input) {
            b.re = v;
        }
        self.fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&self.kernel_hat) {
            *b *= k;
        }
        self.inv.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        for (o, b) in out.iter_mut().zip(&buf[..self.n]) {
            *o = b.re * scale;
        }
    }
}
