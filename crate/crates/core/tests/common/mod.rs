//! Test-only oracles that share no code with the projector under test.
#![allow(dead_code)]

use dosmct::geometry::{DetectorShape, FanBeamGeometry, ImageGrid, ScanMode};
use nalgebra::{DMatrix, DVector};

/// End points of ray (`view`, `det`), derived from the geometry fields with
/// angle arithmetic instead of rotation matrices.
pub fn ray_segment(g: &FanBeamGeometry, view: usize, det: usize) -> ([f64; 2], [f64; 2]) {
    let beta = g.view_angles[view];
    let n = g.n_detectors as f64;
    let k = det as f64 - (n - 1.0) / 2.0;
    match (g.mode, g.detector) {
        (ScanMode::Parallel, _) => {
            let u = k * g.detector_width_total / n;
            let base = [u * (beta + std::f64::consts::FRAC_PI_2).cos(), u * (beta + std::f64::consts::FRAC_PI_2).sin()];
            let far = 1e4;
            (
                [base[0] + far * beta.cos(), base[1] + far * beta.sin()],
                [base[0] - far * beta.cos(), base[1] - far * beta.sin()],
            )
        }
        (ScanMode::Fan, DetectorShape::Equiangular) => {
            let sdd = g.source_to_center + g.center_to_detector;
            let gamma = k * g.detector_width_total / (n * sdd);
            let src = [g.source_to_center * beta.cos(), g.source_to_center * beta.sin()];
            // direction at angle beta + pi - gamma, by the difference formula;
            // summing the angles first costs an ulp of direction, amplified
            // on corner chords
            let (sb, cb) = beta.sin_cos();
            let (sg, cg) = gamma.sin_cos();
            let dir = [-(cb * cg + sb * sg), -(sb * cg - cb * sg)];
            (src, [src[0] + sdd * dir[0], src[1] + sdd * dir[1]])
        }
        (ScanMode::Fan, DetectorShape::Flat) => {
            let sdd = g.source_to_center + g.center_to_detector;
            let u = k * g.detector_width_total / n;
            let src = [g.source_to_center * beta.cos(), g.source_to_center * beta.sin()];
            let perp = beta + std::f64::consts::FRAC_PI_2;
            (
                src,
                [
                    src[0] - sdd * beta.cos() + u * perp.cos(),
                    src[1] - sdd * beta.sin() + u * perp.sin(),
                ],
            )
        }
    }
}

/// Part of segment `a -> b` inside the axis-aligned box (Liang–Barsky).
pub fn clip_segment(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for ax in 0..2 {
        if d[ax] == 0.0 {
            if a[ax] < lo[ax] || a[ax] > hi[ax] {
                return None;
            }
        } else {
            let ta = (lo[ax] - a[ax]) / d[ax];
            let tb = (hi[ax] - a[ax]) / d[ax];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t1 > t0).then(|| {
        (
            [a[0] + t0 * d[0], a[1] + t0 * d[1]],
            [a[0] + t1 * d[0], a[1] + t1 * d[1]],
        )
    })
}

/// Length of segment `a -> b` inside the axis-aligned box.
pub fn clip_length(a: [f64; 2], b: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    clip_segment(a, b, lo, hi).map_or(0.0, |(p, q)| (q[0] - p[0]).hypot(q[1] - p[1]))
}

/// Explicit system matrix: rows are rays (view-major), columns pixels
/// (row-major, row 0 at the top).
pub fn dense_system_matrix(g: &FanBeamGeometry, grid: &ImageGrid) -> DMatrix<f64> {
    let p = grid.pixel_size;
    let x_left = grid.center_offset[0] - grid.nx as f64 * p / 2.0;
    let y_top = grid.center_offset[1] + grid.ny as f64 * p / 2.0;
    let mut m = DMatrix::zeros(g.n_views() * g.n_detectors, grid.nx * grid.ny);
    for v in 0..g.n_views() {
        for d in 0..g.n_detectors {
            let (a, b) = ray_segment(g, v, d);
            // shorten to the part inside the grid before per-pixel clipping
            let glo = [x_left, y_top - grid.ny as f64 * p];
            let ghi = [x_left + grid.nx as f64 * p, y_top];
            let Some((a, b)) = clip_segment(a, b, glo, ghi) else {
                continue;
            };
            for row in 0..grid.ny {
                for col in 0..grid.nx {
                    let lo = [x_left + col as f64 * p, y_top - (row + 1) as f64 * p];
                    let hi = [lo[0] + p, lo[1] + p];
                    m[(v * g.n_detectors + d, row * grid.nx + col)] = clip_length(a, b, lo, hi);
                }
            }
        }
    }
    m
}

/// Minimum-norm least-squares solution via SVD.
pub fn least_squares(a: &DMatrix<f64>, y: &[f64]) -> Vec<f64> {
    let svd = a.clone().svd(true, true);
    let sol = svd.solve(&DVector::from_column_slice(y), 1e-12).expect("svd solve");
    sol.iter().copied().collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

/// Small deterministic generator so oracle inputs do not depend on the
/// crate's RNG plumbing.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }
}
