use rayon::prelude::*;

use super::{check_finite, traverse, FanBeamGeometry, Image, ImageGrid, Ray, Sinogram};
use crate::error::{Error, Result};
use crate::real::Real;

/// Upper bound on the number of partial images reduced by the back projector.
/// The partition depends only on the view count, never on the thread count.
const BACKPROJECT_CHUNKS: usize = 16;

/// Matrix-free system operator `A` and its exact transpose for one
/// (geometry, grid) pair. Rays are generated once; intersection lengths are
/// recomputed by traversal on every application.
#[derive(Debug, Clone)]
pub struct Projector {
    geometry: FanBeamGeometry,
    grid: ImageGrid,
    rays: Vec<Ray>,
}

impl Projector {
    pub fn new(geometry: FanBeamGeometry, grid: ImageGrid) -> Result<Self> {
        geometry.validate()?;
        grid.validate()?;
        let rays = (0..geometry.n_views())
            .flat_map(|v| (0..geometry.n_detectors).map(move |d| (v, d)))
            .map(|(v, d)| geometry.ray(v, d))
            .collect();
        Ok(Self {
            geometry,
            grid,
            rays,
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    /// `A x`
    pub fn forward<T: Real>(&self, image: &Image<T>) -> Result<Sinogram<T>> {
        if image.grid != self.grid {
            return Err(Error::Shape("image grid differs from projector grid".into()));
        }
        image.check_finite("forward projection input")?;
        let mut out = vec![T::zero(); self.rays.len()];
        self.forward_into(&image.values, &mut out);
        Ok(Sinogram {
            geometry: self.geometry.clone(),
            values: out,
        })
    }

    /// `Aᵀ y`
    pub fn back<T: Real>(&self, sino: &Sinogram<T>) -> Result<Image<T>> {
        if sino.geometry != self.geometry {
            return Err(Error::Shape("sinogram geometry differs from projector geometry".into()));
        }
        sino.check_shape()?;
        check_finite(&sino.values, "back projection input")?;
        let mut out = vec![T::zero(); self.grid.len()];
        self.back_into(&sino.values, &mut out);
        Ok(Image {
            grid: self.grid,
            values: out,
        })
    }

    /// Unchecked `out = A x` on raw buffers.
    pub fn forward_into<T: Real>(&self, x: &[T], out: &mut [T]) {
        assert_eq!(x.len(), self.grid.len());
        assert_eq!(out.len(), self.rays.len());
        let grid = &self.grid;
        out.par_iter_mut().zip(&self.rays).for_each(|(o, ray)| {
            let mut acc = T::zero();
            traverse(grid, ray, |i, len| acc += T::of(len) * x[i]);
            *o = acc;
        });
    }

    /// Unchecked `out = Aᵀ y` on raw buffers.
    ///
    /// Views are split into at most [`BACKPROJECT_CHUNKS`] contiguous blocks,
    /// each accumulated into its own partial image; partials are summed in
    /// block order so the result is independent of scheduling.
    pub fn back_into<T: Real>(&self, y: &[T], out: &mut [T]) {
        assert_eq!(y.len(), self.rays.len());
        assert_eq!(out.len(), self.grid.len());
        let n_det = self.geometry.n_detectors;
        let n_views = self.geometry.n_views();
        let per_chunk = n_views.div_ceil(BACKPROJECT_CHUNKS).max(1);
        let grid = &self.grid;
        let partials: Vec<Vec<T>> = (0..n_views)
            .step_by(per_chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|v0| {
                let mut acc = vec![T::zero(); grid.len()];
                let r0 = v0 * n_det;
                let r1 = ((v0 + per_chunk).min(n_views)) * n_det;
                for r in r0..r1 {
                    let w = y[r];
                    if w != T::zero() {
                        traverse(grid, &self.rays[r], |i, len| acc[i] += T::of(len) * w);
                    }
                }
                acc
            })
            .collect();
        out.iter_mut().for_each(|o| *o = T::zero());
        for p in &partials {
            for (o, &v) in out.iter_mut().zip(p) {
                *o += v;
            }
        }
    }

    /// Reciprocal row and column sums of `A`, guarded against empty rays and
    /// pixels outside the field of view.
    pub fn sirt_weights<T: Real>(&self) -> SirtWeights<T> {
        let guard = 1e-12 * self.grid.pixel_size;
        let mut row = vec![0.0f64; self.rays.len()];
        self.forward_into(&vec![1.0f64; self.grid.len()], &mut row);
        let mut col = vec![0.0f64; self.grid.len()];
        self.back_into(&vec![1.0f64; self.rays.len()], &mut col);
        let inv = |s: f64| if s > guard { T::of(1.0 / s) } else { T::zero() };
        SirtWeights {
            row_inv: row.into_iter().map(inv).collect(),
            col_inv: col.into_iter().map(inv).collect(),
        }
    }
}

/// Diagonals `E` (per ray) and `D` (per pixel) of the SIRT update
/// `x <- x + D Aᵀ E (y - A x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SirtWeights<T> {
    pub row_inv: Vec<T>,
    pub col_inv: Vec<T>,
}

pub fn forward_project<T: Real>(image: &Image<T>, geom: &FanBeamGeometry) -> Result<Sinogram<T>> {
    Projector::new(geom.clone(), image.grid)?.forward(image)
}

pub fn back_project<T: Real>(sino: &Sinogram<T>, grid: &ImageGrid) -> Result<Image<T>> {
    Projector::new(sino.geometry.clone(), *grid)?.back(sino)
}

pub fn sirt_weights<T: Real>(geom: &FanBeamGeometry, grid: &ImageGrid) -> Result<SirtWeights<T>> {
    Ok(Projector::new(geom.clone(), *grid)?.sirt_weights())
}
