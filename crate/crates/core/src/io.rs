//! Array files and previews.
//!
//! Arrays are stored as raw little-endian `float32` (`<stem>.f32raw`) next to
//! a JSON sidecar (`<stem>.json`). Sidecar keys:
//!
//! | key             | meaning                                               |
//! |-----------------|-------------------------------------------------------|
//! | `format`        | always `"f32raw"`                                     |
//! | `version`       | sidecar schema version, currently 1                   |
//! | `kind`          | `"image"` or `"sinogram"`                             |
//! | `shape`         | `[rows, cols]`: `[ny, nx]` or `[n_views, n_detectors]`|
//! | `dtype`         | always `"float32"`                                    |
//! | `byte_order`    | always `"little"`                                     |
//! | `grid`          | image grid (images only)                              |
//! | `geometry`      | scan geometry (sinograms only)                        |
//! | `geometry_hash` | SHA-256 of the geometry JSON (sinograms only)         |
//! | `data_sha256`   | SHA-256 of the raw payload                            |
//! | `window`        | `[min, max]` used for the `.pgm` preview, if written  |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Image, ImageGrid, Sinogram};
use crate::real::Real;

pub const SIDECAR_VERSION: u32 = 1;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Image,
    Sinogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub kind: ArrayKind,
    pub shape: [usize; 2],
    pub dtype: String,
    pub byte_order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<ImageGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<FanBeamGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry_hash: Option<String>,
    pub data_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

/// `<stem>.f32raw` and `<stem>.json` for a path given with or without extension.
pub fn array_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("f32raw"), path.with_extension("json"))
}

fn encode<T: Real>(values: &[T]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
        .collect()
}

fn decode<T: Real>(bytes: &[u8], expected: usize) -> Result<Vec<T>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Shape(format!(
            "payload has {} bytes, expected {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}

fn write_array(path: &Path, payload: &[u8], mut sidecar: Sidecar) -> Result<PathBuf> {
    let (raw, json) = array_paths(path);
    if let Some(dir) = raw.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    sidecar.data_sha256 = sha256_hex(payload);
    fs::write(&raw, payload)?;
    fs::write(&json, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(raw)
}

fn read_array(path: &Path, kind: ArrayKind) -> Result<(Sidecar, Vec<u8>)> {
    let (raw, json) = array_paths(path);
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(&json)?)?;
    if sidecar.kind != kind {
        return Err(Error::Shape(format!(
            "{} holds {:?}, expected {:?}",
            json.display(),
            sidecar.kind,
            kind
        )));
    }
    if sidecar.dtype != "float32" || sidecar.byte_order != "little" {
        return Err(Error::Shape(format!(
            "unsupported encoding {} / {}",
            sidecar.dtype, sidecar.byte_order
        )));
    }
    let payload = fs::read(&raw)?;
    if sha256_hex(&payload) != sidecar.data_sha256 {
        return Err(Error::Shape(format!("{} fails its checksum", raw.display())));
    }
    Ok((sidecar, payload))
}

fn base_sidecar(kind: ArrayKind, shape: [usize; 2]) -> Sidecar {
    Sidecar {
        format: "f32raw".into(),
        version: SIDECAR_VERSION,
        kind,
        shape,
        dtype: "float32".into(),
        byte_order: "little".into(),
        grid: None,
        geometry: None,
        geometry_hash: None,
        data_sha256: String::new(),
        window: None,
    }
}

/// Writes an image; values are rounded to `f32`. Returns the `.f32raw` path.
pub fn write_image<T: Real>(path: &Path, img: &Image<T>, window: Option<[f64; 2]>) -> Result<PathBuf> {
    let mut sc = base_sidecar(ArrayKind::Image, [img.grid.ny, img.grid.nx]);
    sc.grid = Some(img.grid);
    sc.window = window;
    write_array(path, &encode(&img.values), sc)
}

pub fn read_image<T: Real>(path: &Path) -> Result<Image<T>> {
    let (sc, payload) = read_array(path, ArrayKind::Image)?;
    let grid = sc
        .grid
        .ok_or_else(|| Error::Shape("image sidecar lacks a grid".into()))?;
    if sc.shape != [grid.ny, grid.nx] {
        return Err(Error::Shape("sidecar shape disagrees with grid".into()));
    }
    Image::from_vec(grid, decode(&payload, grid.len())?)
}

pub fn write_sinogram<T: Real>(path: &Path, sino: &Sinogram<T>, window: Option<[f64; 2]>) -> Result<PathBuf> {
    let g = &sino.geometry;
    let mut sc = base_sidecar(ArrayKind::Sinogram, [g.n_views(), g.n_detectors]);
    sc.geometry_hash = Some(g.hash_hex());
    sc.geometry = Some(g.clone());
    sc.window = window;
    write_array(path, &encode(&sino.values), sc)
}

pub fn read_sinogram<T: Real>(path: &Path) -> Result<Sinogram<T>> {
    let (sc, payload) = read_array(path, ArrayKind::Sinogram)?;
    let geometry = sc
        .geometry
        .ok_or_else(|| Error::Shape("sinogram sidecar lacks a geometry".into()))?;
    if let Some(h) = &sc.geometry_hash {
        if *h != geometry.hash_hex() {
            return Err(Error::Shape("geometry hash mismatch".into()));
        }
    }
    if sc.shape != [geometry.n_views(), geometry.n_detectors] {
        return Err(Error::Shape("sidecar shape disagrees with geometry".into()));
    }
    let n = geometry.n_rays();
    Sinogram::from_vec(geometry, decode(&payload, n)?)
}

/// 8-bit binary PGM with linear windowing; values outside the window clip.
pub fn write_pgm<T: Real>(path: &Path, values: &[T], width: usize, height: usize, window: [f64; 2]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::Shape("preview buffer size".into()));
    }
    let [lo, hi] = window;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| {
        let t = ((v.as_f64() - lo) / span).clamp(0.0, 1.0);
        (t * 255.0).round() as u8
    }));
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Window spanning the data range of `values`.
pub fn auto_window<T: Real>(values: &[T]) -> [f64; 2] {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
        (l.min(v.as_f64()), h.max(v.as_f64()))
    });
    if lo.is_finite() && hi.is_finite() {
        [lo, hi]
    } else {
        [0.0, 1.0]
    }
}
