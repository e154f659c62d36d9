//! Image quality metrics and line profiles.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Image;
use crate::real::Real;

/// Local SSIM window: Gaussian, `size x size` taps, std `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl SsimParams {
    /// Normalized 1-D taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.size as f64 - 1.0) / 2.0;
        let w: Vec<f64> = (0..self.size)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }
}

fn check_pair<T: Real>(a: &Image<T>, b: &Image<T>, data_range: f64) -> Result<()> {
    a.same_grid(b)?;
    if !(data_range > 0.0 && data_range.is_finite()) {
        return Err(invalid("data range", format!("{data_range}")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the images agree.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>, data_range: f64) -> Result<f64> {
    check_pair(a, b, data_range)?;
    let sse: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.values.len() as f64;
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Valid-region correlation of `img` (`nx` wide) with the separable window.
fn filter_valid(img: &[f64], nx: usize, ny: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ox, oy) = (nx + 1 - k, ny + 1 - k);
    let mut tmp = vec![0.0; ny * ox];
    for r in 0..ny {
        let row = &img[r * nx..(r + 1) * nx];
        for c in 0..ox {
            tmp[r * ox + c] = taps.iter().zip(&row[c..c + k]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; oy * ox];
    for r in 0..oy {
        for c in 0..ox {
            out[r * ox + c] = taps.iter().enumerate().map(|(i, w)| w * tmp[(r + i) * ox + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully contained windows, with the
/// Gaussian-weighted moments of the original formulation (no sample
/// covariance correction).
pub fn ssim_with<T: Real>(a: &Image<T>, b: &Image<T>, data_range: f64, params: &SsimParams) -> Result<f64> {
    check_pair(a, b, data_range)?;
    let (nx, ny) = (a.grid.nx, a.grid.ny);
    if nx < params.size || ny < params.size {
        return Err(invalid(
            "ssim input",
            format!("{nx}x{ny} is smaller than the {0}x{0} window", params.size),
        ));
    }
    let taps = params.taps();
    let av: Vec<f64> = a.values.iter().map(|v| v.as_f64()).collect();
    let bv: Vec<f64> = b.values.iter().map(|v| v.as_f64()).collect();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = filter_valid(&av, nx, ny, &taps);
    let mu_b = filter_valid(&bv, nx, ny, &taps);
    let aa = filter_valid(&prod(&av, &av), nx, ny, &taps);
    let bb = filter_valid(&prod(&bv, &bv), nx, ny, &taps);
    let ab = filter_valid(&prod(&av, &bv), nx, ny, &taps);
    let c1 = (params.k1 * data_range).powi(2);
    let c2 = (params.k2 * data_range).powi(2);
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>, data_range: f64) -> Result<f64> {
    ssim_with(a, b, data_range, &SsimParams::default())
}

/// Scores of `recon` against `truth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub data_range: f64,
    pub window: SsimParams,
}

impl MetricReport {
    /// `data_range` defaults to the span of `truth`.
    pub fn evaluate<T: Real>(recon: &Image<T>, truth: &Image<T>, data_range: Option<f64>) -> Result<Self> {
        let data_range = match data_range {
            Some(r) => r,
            None => {
                let (lo, hi) = truth.min_max();
                (hi - lo).as_f64()
            }
        };
        let window = SsimParams::default();
        Ok(Self {
            psnr: psnr(recon, truth, data_range)?,
            ssim: ssim_with(recon, truth, data_range, &window)?,
            data_range,
            window,
        })
    }
}

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn metric_table_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("method,views,psnr,ssim\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.method, r.views, r.psnr, r.ssim);
    }
    s
}

/// A full image row or column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "axis", content = "index")]
pub enum Line {
    Row(usize),
    Col(usize),
}

pub fn profile<T: Real>(img: &Image<T>, line: Line) -> Result<Vec<T>> {
    let g = img.grid;
    match line {
        Line::Row(r) if r < g.ny => Ok(img.values[r * g.nx..(r + 1) * g.nx].to_vec()),
        Line::Col(c) if c < g.nx => Ok((0..g.ny).map(|r| img.values[r * g.nx + c]).collect()),
        Line::Row(r) => Err(Error::OutOfRange { index: r, len: g.ny }),
        Line::Col(c) => Err(Error::OutOfRange { index: c, len: g.nx }),
    }
}

/// `position,value` with shortest round-trip float formatting.
pub fn write_profile_csv<T: Real>(path: &Path, values: &[T]) -> Result<()> {
    let mut s = String::from("position,value\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", v.as_f64());
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_profile_csv<T: Real>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v = l
                .split(',')
                .nth(1)
                .ok_or_else(|| Error::Shape(format!("malformed profile line {l:?}")))?;
            v.trim()
                .parse::<f64>()
                .map(T::of)
                .map_err(|e| Error::Shape(format!("bad value {v:?}: {e}")))
        })
        .collect()
}
