use super::{DetectorShape, FanBeamGeometry, ImageGrid, ScanMode};

/// Parametric segment `origin + t * dir`, `t` in `[t_min, t_max]`, `dir` unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: [f64; 2],
    pub dir: [f64; 2],
    pub t_min: f64,
    pub t_max: f64,
}

impl FanBeamGeometry {
    /// Ray measured by detector element `det` in view `view`.
    ///
    /// The source sits at angle `beta` (direction `e = (cos, sin)`); the
    /// detector axis is `e` rotated by +90 degrees. Elements with positive
    /// offset lie towards `+axis` for every detector shape, so an equiangular
    /// ray at fan angle `gamma` is `-e` rotated clockwise by `gamma`.
    pub fn ray(&self, view: usize, det: usize) -> Ray {
        let (s, c) = self.view_angles[view].sin_cos();
        let e = [c, s];
        let axis = [-s, c];
        let offset = self.detector_offset(det) * self.detector_pitch();
        match (self.mode, self.detector) {
            (ScanMode::Parallel, _) => Ray {
                origin: [offset * axis[0], offset * axis[1]],
                dir: [-c, -s],
                t_min: f64::NEG_INFINITY,
                t_max: f64::INFINITY,
            },
            (ScanMode::Fan, DetectorShape::Equiangular) => {
                let (sg, cg) = offset.sin_cos();
                Ray {
                    origin: [self.source_to_center * c, self.source_to_center * s],
                    dir: [-c * cg - s * sg, c * sg - s * cg],
                    t_min: 0.0,
                    t_max: self.source_to_detector(),
                }
            }
            (ScanMode::Fan, DetectorShape::Flat) => {
                let sdd = self.source_to_detector();
                let v = [-sdd * e[0] + offset * axis[0], -sdd * e[1] + offset * axis[1]];
                let len = v[0].hypot(v[1]);
                Ray {
                    origin: [self.source_to_center * c, self.source_to_center * s],
                    dir: [v[0] / len, v[1] / len],
                    t_min: 0.0,
                    t_max: len,
                }
            }
        }
    }
}

/// Walks the pixels crossed by `ray` and reports `(pixel index, chord length)`.
///
/// Each boundary crossing is recomputed from the grid lines rather than by
/// accumulating increments, so lengths carry only local rounding error and
/// telescope to the clipped segment length.
pub fn traverse(grid: &ImageGrid, ray: &Ray, mut emit: impl FnMut(usize, f64)) {
    let p = grid.pixel_size;
    let lo = grid.lower_corner();
    let hi = [lo[0] + grid.nx as f64 * p, lo[1] + grid.ny as f64 * p];

    let mut t_in = ray.t_min;
    let mut t_out = ray.t_max;
    for a in 0..2 {
        let (o, d) = (ray.origin[a], ray.dir[a]);
        if d == 0.0 {
            if o <= lo[a] || o >= hi[a] {
                return;
            }
        } else {
            let t0 = (lo[a] - o) / d;
            let t1 = (hi[a] - o) / d;
            t_in = t_in.max(t0.min(t1));
            t_out = t_out.min(t0.max(t1));
        }
    }
    if !(t_out > t_in) {
        return;
    }
    // re-origin at the entry point so chord lengths are differences of
    // grid-sized parameters rather than source-distance-sized ones
    let origin = [ray.origin[0] + t_in * ray.dir[0], ray.origin[1] + t_in * ray.dir[1]];
    let t_out = t_out - t_in;
    let t_in = 0.0;

    let n = [grid.nx as i64, grid.ny as i64];
    // cell indices along x and along y (y counted upward from the bottom row)
    let mut cell = [0i64; 2];
    let mut step = [0i64; 2];
    for a in 0..2 {
        let pos = origin[a];
        cell[a] = (((pos - lo[a]) / p).floor() as i64).clamp(0, n[a] - 1);
        step[a] = if ray.dir[a] > 0.0 {
            1
        } else if ray.dir[a] < 0.0 {
            -1
        } else {
            0
        };
    }

    let next_crossing = |a: usize, c: i64| -> f64 {
        match step[a] {
            1 => (lo[a] + (c + 1) as f64 * p - origin[a]) / ray.dir[a],
            -1 => (lo[a] + c as f64 * p - origin[a]) / ray.dir[a],
            _ => f64::INFINITY,
        }
    };

    let mut t = t_in;
    loop {
        let tx = next_crossing(0, cell[0]);
        let ty = next_crossing(1, cell[1]);
        let t_next = tx.min(ty).min(t_out);
        if t_next > t {
            let row = (n[1] - 1 - cell[1]) as usize;
            emit(row * grid.nx + cell[0] as usize, t_next - t);
            t = t_next;
        }
        if t_next >= t_out {
            break;
        }
        if tx <= ty {
            cell[0] += step[0];
        }
        if ty <= tx {
            cell[1] += step[1];
        }
        if cell[0] < 0 || cell[0] >= n[0] || cell[1] < 0 || cell[1] >= n[1] {
            break;
        }
    }
}
