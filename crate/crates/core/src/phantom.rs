//! Analytic phantoms, simulated measurements, and view subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{FanBeamGeometry, Image, ImageGrid, Projector, Sinogram};
use crate::real::Real;

/// Name of the generator used for measurement noise; recorded in manifests.
pub const NOISE_PRNG: &str = "chacha20 (rand_chacha 0.9) + rand_distr::StandardNormal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Modified (high-contrast) Shepp–Logan head, scaled to the grid.
    SheppLogan,
    /// Sum of uniform ellipses from `shapes`.
    EllipseSet,
    /// Sum of anisotropic Gaussian blobs from `shapes`; axes are std devs.
    GaussianBlobField,
}

/// One ellipse or blob. Lengths in mm, angle in radians (counter-clockwise
/// from the x axis to the first semi-axis).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shape {
    pub center: [f64; 2],
    pub axes: [f64; 2],
    pub angle: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// `[nx, ny]`
    pub size: [usize; 2],
    pub pixel_size: f64,
    /// Samples per pixel side; each pixel is the mean over a regular
    /// `supersample x supersample` lattice of sub-pixel centres. 1 samples the
    /// pixel centre only.
    #[serde(default = "default_supersample")]
    pub supersample: usize,
    #[serde(default)]
    pub shapes: Vec<Shape>,
}

pub const SUPERSAMPLE: usize = 4;

fn default_supersample() -> usize {
    SUPERSAMPLE
}

impl PhantomSpec {
    pub fn shepp_logan(n: usize, pixel_size: f64) -> Self {
        Self {
            kind: PhantomKind::SheppLogan,
            size: [n, n],
            pixel_size,
            supersample: SUPERSAMPLE,
            shapes: Vec::new(),
        }
    }

    pub fn grid(&self) -> Result<ImageGrid> {
        ImageGrid::new(self.size[0], self.size[1], self.pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size[0] < 8 || self.size[1] < 8 {
            return Err(invalid("phantom", "size must be at least 8x8"));
        }
        self.grid()?;
        if self.supersample == 0 {
            return Err(invalid("phantom", "supersample must be at least 1"));
        }
        for s in &self.shapes {
            let finite = s.center.iter().chain(&s.axes).all(|v| v.is_finite())
                && s.angle.is_finite()
                && s.amplitude.is_finite();
            if !finite || s.axes.iter().any(|&a| a <= 0.0) {
                return Err(invalid("phantom", format!("bad shape {s:?}")));
            }
        }
        Ok(())
    }

    /// Shapes actually rasterized (the built-in head for Shepp–Logan).
    pub fn resolved_shapes(&self) -> Vec<Shape> {
        match self.kind {
            PhantomKind::SheppLogan => {
                let half = 0.5 * (self.size[0].min(self.size[1]) as f64) * self.pixel_size;
                shepp_logan_shapes(half)
            }
            _ => self.shapes.clone(),
        }
    }
}

/// Modified Shepp–Logan ellipses: (amplitude, a, b, x0, y0, angle in degrees)
/// in coordinates normalized to the half-width of the field.
const SHEPP_LOGAN: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// The ten Shepp–Logan ellipses scaled so the unit square maps onto a field
/// of half-width `half` mm.
pub fn shepp_logan_shapes(half: f64) -> Vec<Shape> {
    SHEPP_LOGAN
        .iter()
        .map(|&(amp, a, b, x0, y0, deg)| Shape {
            center: [x0 * half, y0 * half],
            axes: [a * half, b * half],
            angle: deg.to_radians(),
            amplitude: amp,
        })
        .collect()
}

/// Value of the shape set at a point.
pub fn evaluate_shapes(kind: PhantomKind, shapes: &[Shape], x: f64, y: f64) -> f64 {
    shapes
        .iter()
        .map(|s| {
            let (sn, cs) = s.angle.sin_cos();
            let dx = x - s.center[0];
            let dy = y - s.center[1];
            let u = (dx * cs + dy * sn) / s.axes[0];
            let v = (-dx * sn + dy * cs) / s.axes[1];
            let q = u * u + v * v;
            match kind {
                PhantomKind::GaussianBlobField => s.amplitude * (-0.5 * q).exp(),
                _ if q <= 1.0 => s.amplitude,
                _ => 0.0,
            }
        })
        .sum()
}

/// Rasterizes the phantom, averaging `supersample²` point samples per pixel.
pub fn make_phantom<T: Real>(spec: &PhantomSpec) -> Result<Image<T>> {
    spec.validate()?;
    let grid = spec.grid()?;
    let shapes = spec.resolved_shapes();
    let k = spec.supersample;
    let h = grid.pixel_size / k as f64;
    let offsets: Vec<f64> = (0..k).map(|i| (i as f64 + 0.5) * h - 0.5 * grid.pixel_size).collect();
    let mut img = Image::zeros(grid);
    for row in 0..grid.ny {
        for col in 0..grid.nx {
            let [x, y] = grid.pixel_center(col, row);
            let mut acc = 0.0;
            for &dy in &offsets {
                for &dx in &offsets {
                    acc += evaluate_shapes(spec.kind, &shapes, x + dx, y + dy);
                }
            }
            img.values[grid.index(col, row)] = T::of(acc / (k * k) as f64);
        }
    }
    Ok(img)
}

/// Randomly perturbed Shepp–Logan heads with a few extra inserts, used as a
/// training corpus for the score model. Deterministic in `seed`.
pub fn random_head_phantoms<T: Real>(n: usize, pixel_size: f64, count: usize, seed: u64) -> Result<Vec<Image<T>>> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let half = 0.5 * n as f64 * pixel_size;
    (0..count)
        .map(|_| {
            let scale = rng.random_range(0.8..1.0) * half;
            let tilt: f64 = rng.random_range(-0.2..0.2);
            let (st, ct) = tilt.sin_cos();
            let mut shapes: Vec<Shape> = SHEPP_LOGAN
                .iter()
                .enumerate()
                .map(|(k, &(amp, a, b, x0, y0, deg))| {
                    // skull and brain share their geometry jitter
                    let jitter = if k < 2 { 0.0 } else { 0.04 };
                    let axis_j = if k < 2 { 0.05 } else { 0.25 };
                    let cx = x0 + rng.random_range(-jitter..=jitter);
                    let cy = y0 + rng.random_range(-jitter..=jitter);
                    let ax = a * (1.0 + rng.random_range(-axis_j..=axis_j));
                    let bx = b * (1.0 + rng.random_range(-axis_j..=axis_j));
                    let ang = deg.to_radians() + rng.random_range(-0.3..0.3);
                    let amp = if k < 2 {
                        amp
                    } else {
                        amp * rng.random_range(0.5..1.5)
                    };
                    Shape {
                        center: [scale * (cx * ct - cy * st), scale * (cx * st + cy * ct)],
                        axes: [scale * ax, scale * bx],
                        angle: ang + tilt,
                        amplitude: amp,
                    }
                })
                .collect();
            let extra = rng.random_range(0..=4);
            for _ in 0..extra {
                let r = rng.random_range(0.0..0.5);
                let th = rng.random_range(0.0..std::f64::consts::TAU);
                let amp = if rng.random_bool(0.5) { 0.1 } else { -0.1 } * rng.random_range(0.5..2.0);
                shapes.push(Shape {
                    center: [scale * r * th.cos(), scale * r * th.sin()],
                    axes: [
                        scale * rng.random_range(0.02..0.12),
                        scale * rng.random_range(0.02..0.12),
                    ],
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    amplitude: amp,
                });
            }
            make_phantom(&PhantomSpec {
                kind: PhantomKind::EllipseSet,
                size: [n, n],
                pixel_size,
                supersample: SUPERSAMPLE,
                shapes,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    #[default]
    Gaussian,
}

/// Additive measurement noise. `sigma` is an absolute standard deviation in
/// sinogram units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    #[serde(default)]
    pub model: NoiseModel,
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }
}

/// `y = A x + e`, `e ~ N(0, sigma^2 I)` drawn in row-major order from a
/// ChaCha20 stream seeded with `noise.seed`.
pub fn simulate_measurement<T: Real>(image: &Image<T>, geom: &FanBeamGeometry, noise: &NoiseSpec) -> Result<Sinogram<T>> {
    if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
        return Err(invalid("noise", format!("sigma {}", noise.sigma)));
    }
    let mut sino = Projector::new(geom.clone(), image.grid)?.forward(image)?;
    if noise.sigma > 0.0 {
        let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
        for v in sino.values.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += T::of(noise.sigma * z);
        }
    }
    Ok(sino)
}

/// Indices `floor(k * n_views / n_keep)`, `k = 0..n_keep`.
pub fn kept_view_indices(n_views: usize, n_keep: usize) -> Result<Vec<usize>> {
    if n_keep == 0 || n_keep > n_views {
        return Err(invalid(
            "view subsampling",
            format!("cannot keep {n_keep} of {n_views} views"),
        ));
    }
    Ok((0..n_keep).map(|k| k * n_views / n_keep).collect())
}

/// Keeps `n_keep` equi-spaced views; the geometry carries only their angles.
pub fn subsample_views<T: Real>(sino: &Sinogram<T>, n_keep: usize) -> Result<Sinogram<T>> {
    sino.check_shape()?;
    let idx = kept_view_indices(sino.geometry.n_views(), n_keep)?;
    let mut values = Vec::with_capacity(n_keep * sino.geometry.n_detectors);
    for &v in &idx {
        values.extend_from_slice(sino.view(v));
    }
    Ok(Sinogram {
        geometry: sino.geometry.with_views(&idx),
        values,
    })
}
