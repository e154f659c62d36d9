use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dosmct::io::sha256_hex;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::Failure;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self, Failure> {
        let bytes = fs::read(path).map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Record of one command invocation, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub threads: usize,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

pub fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("serializable"))
}

/// Collects inputs, outputs and stage timings while a command runs.
#[derive(Debug)]
pub struct Recorder {
    out_dir: PathBuf,
    inputs: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    timings: BTreeMap<String, f64>,
}

impl Recorder {
    pub fn new(out_dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(out_dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    /// Path of an output file, registered for the manifest.
    pub fn output(&mut self, name: &str) -> PathBuf {
        let p = PathBuf::from(name);
        if !self.outputs.contains(&p) {
            self.outputs.push(p);
        }
        self.out_dir.join(name)
    }

    /// Registers both files of an array written under `stem`.
    pub fn array(&mut self, stem: &str) -> PathBuf {
        self.output(&format!("{stem}.f32raw"));
        self.output(&format!("{stem}.json"));
        self.out_dir.join(stem)
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        let d = FileDigest::of(path)?;
        if !self.inputs.contains(&d) {
            self.inputs.push(d);
        }
        Ok(())
    }

    pub fn time<R>(&mut self, stage: &str, f: impl FnOnce() -> R) -> R {
        let t = Instant::now();
        let r = f();
        *self.timings.entry(stage.into()).or_default() += t.elapsed().as_secs_f64();
        r
    }

    /// Hashes every registered output and writes `manifest.json`.
    pub fn finish(self, command: &str, cfg: &RunConfig) -> Result<Manifest, Failure> {
        let mut outputs = Vec::with_capacity(self.outputs.len());
        for rel in &self.outputs {
            let d = FileDigest::of(&self.out_dir.join(rel))?;
            outputs.push(FileDigest {
                path: rel.clone(),
                sha256: d.sha256,
            });
        }
        let m = Manifest {
            command: command.into(),
            config: cfg.clone(),
            config_hash: config_hash(cfg),
            seed: cfg.seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            threads: rayon::current_num_threads(),
            inputs: self.inputs,
            outputs,
            timings: self.timings,
        };
        fs::write(self.out_dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("malformed manifest {}: {e}", path.display())))
}
