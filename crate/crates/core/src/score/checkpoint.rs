//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic "DOSMCKPT" | u32 version | u64 header length | header JSON
//! | u64 parameter count | f32 parameters | SHA-256 of everything before it
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, DenoiserModel};
use crate::error::{Error, Result};
use crate::real::Real;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DOSMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub n_params: usize,
    pub dtype: String,
    pub conditioning: String,
}

pub fn checkpoint_bytes<T: Real>(model: &DenoiserModel<T>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        architecture: model.arch.clone(),
        n_params: model.params.len(),
        dtype: "float32".into(),
        conditioning: "preconditioned denoiser, log-sigma input plane".into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(64 + json.len() + 4 * model.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        out.extend_from_slice(&(p.as_f64() as f32).to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = bytes
        .get(*at..*at + n)
        .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
    *at += n;
    Ok(s)
}

pub fn checkpoint_from_bytes<T: Real>(bytes: &[u8]) -> Result<DenoiserModel<T>> {
    if bytes.len() < 32 + CHECKPOINT_MAGIC.len() {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("integrity hash mismatch".into()));
    }
    let mut at = 0;
    if take(body, &mut at, 8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(body, &mut at, 4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(body, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(body, &mut at, len)?)?;
    let n = u64::from_le_bytes(take(body, &mut at, 8)?.try_into().expect("8 bytes")) as usize;
    if n != header.n_params {
        return Err(Error::Checkpoint("parameter count disagrees with header".into()));
    }
    let raw = take(body, &mut at, 4 * n)?;
    if at != body.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect();
    DenoiserModel::from_params(header.architecture, params)
}

pub fn save_checkpoint<T: Real>(path: &Path, model: &DenoiserModel<T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<DenoiserModel<T>> {
    checkpoint_from_bytes(&fs::read(path)?)
}
