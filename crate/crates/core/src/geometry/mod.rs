//! Scan geometry, image grid, and the matrix-free projector pair.
//!
//! Coordinates are millimetres in a right-handed frame centred on the
//! rotation axis. Image row 0 is the top of the grid (largest `y`).

mod projector;
mod ray;

pub use projector::{back_project, forward_project, sirt_weights, Projector, SirtWeights};
pub use ray::{traverse, Ray};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::real::Real;

/// Discretized reconstruction domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub nx: usize,
    pub ny: usize,
    /// Pixel edge length in mm.
    pub pixel_size: f64,
    /// Displacement of the grid centre from the rotation axis, mm.
    #[serde(default)]
    pub center_offset: [f64; 2],
}

impl ImageGrid {
    pub fn new(nx: usize, ny: usize, pixel_size: f64) -> Result<Self> {
        let g = Self {
            nx,
            ny,
            pixel_size,
            center_offset: [0.0, 0.0],
        };
        g.validate()?;
        Ok(g)
    }

    /// Square grid centred on the rotation axis.
    pub fn square(n: usize, pixel_size: f64) -> Result<Self> {
        Self::new(n, n, pixel_size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(invalid("grid", format!("{}x{} has no pixels", self.nx, self.ny)));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(invalid("grid", format!("pixel_size {}", self.pixel_size)));
        }
        if !self.center_offset.iter().all(|v| v.is_finite()) {
            return Err(invalid("grid", "center_offset not finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Left edge (x) and bottom edge (y) of the grid.
    #[inline]
    pub fn lower_corner(&self) -> [f64; 2] {
        [
            self.center_offset[0] - 0.5 * self.nx as f64 * self.pixel_size,
            self.center_offset[1] - 0.5 * self.ny as f64 * self.pixel_size,
        ]
    }

    /// Centre of pixel (`col`, `row`) in mm.
    #[inline]
    pub fn pixel_center(&self, col: usize, row: usize) -> [f64; 2] {
        let [x0, y0] = self.lower_corner();
        [
            x0 + (col as f64 + 0.5) * self.pixel_size,
            y0 + ((self.ny - 1 - row) as f64 + 0.5) * self.pixel_size,
        ]
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.nx + col
    }
}

/// Pixel array over an [`ImageGrid`], row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub grid: ImageGrid,
    pub values: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            grid,
            values: vec![T::zero(); grid.len()],
        }
    }

    pub fn filled(grid: ImageGrid, v: T) -> Self {
        Self {
            grid,
            values: vec![v; grid.len()],
        }
    }

    /// Wraps `values`, checking length and finiteness.
    pub fn from_vec(grid: ImageGrid, values: Vec<T>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.len() {
            return Err(Error::Shape(format!(
                "image has {} values, grid {}x{} needs {}",
                values.len(),
                grid.nx,
                grid.ny,
                grid.len()
            )));
        }
        let img = Self { grid, values };
        img.check_finite("image")?;
        Ok(img)
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        check_finite(&self.values, context)
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> T {
        self.values[self.grid.index(col, row)]
    }

    pub fn same_grid(&self, other: &Image<T>) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::Shape(format!(
                "grids differ: {}x{} vs {}x{}",
                self.grid.nx, self.grid.ny, other.grid.nx, other.grid.ny
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: T, other: &Image<T>) {
        for (s, &o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn norm(&self) -> T {
        crate::real::norm2(&self.values)
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            grid: self.grid,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.values
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Fan-beam or parallel-beam acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    #[default]
    Fan,
    Parallel,
}

/// Detector layout for fan-beam mode. Ignored in parallel mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectorShape {
    /// Arc centred on the source, elements equally spaced in fan angle.
    #[default]
    Equiangular,
    /// Flat panel perpendicular to the central ray.
    Flat,
}

/// Scanner description.
///
/// In fan mode `detector_width_total` is the arc length (equiangular) or
/// panel width (flat) at the detector. In parallel mode it is the width of
/// the detector row; the distances are only validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanBeamGeometry {
    pub source_to_center: f64,
    pub center_to_detector: f64,
    pub n_detectors: usize,
    pub detector_width_total: f64,
    pub view_angles: Vec<f64>,
    #[serde(default)]
    pub mode: ScanMode,
    #[serde(default)]
    pub detector: DetectorShape,
}

impl FanBeamGeometry {
    /// `n_views` angles spaced uniformly over `[0, 2π)`.
    pub fn full_circle_angles(n_views: usize) -> Vec<f64> {
        (0..n_views)
            .map(|k| k as f64 * std::f64::consts::TAU / n_views as f64)
            .collect()
    }

    /// `n_views` angles spaced uniformly over `[0, π)`.
    pub fn half_circle_angles(n_views: usize) -> Vec<f64> {
        (0..n_views)
            .map(|k| k as f64 * std::f64::consts::PI / n_views as f64)
            .collect()
    }

    /// Equiangular fan beam with the clinical distances (1500 mm / 500 mm,
    /// 413 mm detector arc).
    pub fn clinical_fan(n_detectors: usize, n_views: usize) -> Self {
        Self {
            source_to_center: 1500.0,
            center_to_detector: 500.0,
            n_detectors,
            detector_width_total: 413.0,
            view_angles: Self::full_circle_angles(n_views),
            mode: ScanMode::Fan,
            detector: DetectorShape::Equiangular,
        }
    }

    pub fn parallel(n_detectors: usize, detector_width_total: f64, view_angles: Vec<f64>) -> Self {
        Self {
            source_to_center: 1.0,
            center_to_detector: 1.0,
            n_detectors,
            detector_width_total,
            view_angles,
            mode: ScanMode::Parallel,
            detector: DetectorShape::Equiangular,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.source_to_center) || !pos(self.center_to_detector) {
            return Err(invalid("geometry", "distances must be positive"));
        }
        if self.n_detectors == 0 {
            return Err(invalid("geometry", "n_detectors must be >= 1"));
        }
        if !pos(self.detector_width_total) {
            return Err(invalid("geometry", "detector_width_total must be positive"));
        }
        if self.view_angles.is_empty() {
            return Err(invalid("geometry", "no view angles"));
        }
        let tau = std::f64::consts::TAU;
        if let Some(a) = self.view_angles.iter().find(|&&a| !(0.0..tau).contains(&a)) {
            return Err(invalid("geometry", format!("view angle {a} outside [0, 2pi)")));
        }
        if self.mode == ScanMode::Fan && self.detector == DetectorShape::Equiangular {
            let half_fan = 0.5 * self.detector_width_total / self.source_to_detector();
            if half_fan >= std::f64::consts::FRAC_PI_2 {
                return Err(invalid("geometry", "fan angle must be below 180 degrees"));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn n_views(&self) -> usize {
        self.view_angles.len()
    }

    #[inline]
    pub fn n_rays(&self) -> usize {
        self.n_views() * self.n_detectors
    }

    #[inline]
    pub fn source_to_detector(&self) -> f64 {
        self.source_to_center + self.center_to_detector
    }

    /// Element pitch: radians for equiangular fan, mm otherwise.
    pub fn detector_pitch(&self) -> f64 {
        match (self.mode, self.detector) {
            (ScanMode::Fan, DetectorShape::Equiangular) => {
                self.detector_width_total / (self.n_detectors as f64 * self.source_to_detector())
            }
            _ => self.detector_width_total / self.n_detectors as f64,
        }
    }

    /// Signed offset of element `d` from the detector centre, in pitch units.
    #[inline]
    pub fn detector_offset(&self, d: usize) -> f64 {
        d as f64 + 0.5 - 0.5 * self.n_detectors as f64
    }

    /// Same geometry restricted to the given view indices.
    pub fn with_views(&self, indices: &[usize]) -> Self {
        Self {
            view_angles: indices.iter().map(|&i| self.view_angles[i]).collect(),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("geometry serializes");
        crate::io::sha256_hex(&json)
    }
}

/// Measurement array `[n_views x n_detectors]`, row-major by view.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    pub geometry: FanBeamGeometry,
    pub values: Vec<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn zeros(geometry: FanBeamGeometry) -> Self {
        let n = geometry.n_rays();
        Self {
            geometry,
            values: vec![T::zero(); n],
        }
    }

    pub fn from_vec(geometry: FanBeamGeometry, values: Vec<T>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.n_rays() {
            return Err(Error::Shape(format!(
                "sinogram has {} values, geometry needs {}x{}",
                values.len(),
                geometry.n_views(),
                geometry.n_detectors
            )));
        }
        check_finite(&values, "sinogram")?;
        Ok(Self { geometry, values })
    }

    pub fn view(&self, v: usize) -> &[T] {
        let n = self.geometry.n_detectors;
        &self.values[v * n..(v + 1) * n]
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.values.len() != self.geometry.n_rays() {
            return Err(Error::Shape(format!(
                "sinogram has {} values, geometry needs {}",
                self.values.len(),
                self.geometry.n_rays()
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, a: T) -> Self {
        Self {
            geometry: self.geometry.clone(),
            values: self.values.iter().map(|&v| a * v).collect(),
        }
    }
}

pub(crate) fn check_finite<T: Real>(values: &[T], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite(format!("{context} (element {i})"))),
    }
}
