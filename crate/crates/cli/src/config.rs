//! Run configuration. Resolution order: defaults, then command-line flags,
//! then the JSON config file, each layer overriding the previous one.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dosmct::dosm::DosmConfig;
use dosmct::geometry::FanBeamGeometry;
use dosmct::phantom::{NoiseSpec, PhantomSpec};
use dosmct::score::{Architecture, NoiseSchedule, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Fbp,
    Sirt,
    Fista,
    Dosm,
    /// Unconditional predictor–corrector sampling; ignores the data.
    Pc,
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(Value::String(s.to_ascii_lowercase()))
            .map_err(|_| format!("unknown method '{s}' (expected fbp, sirt, fista, dosm or pc)"))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("serializable");
        f.write_str(v.as_str().expect("string"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    #[serde(rename = "N", alias = "n")]
    Channels,
    #[serde(rename = "K", alias = "k")]
    InnerIters,
    #[serde(rename = "beta")]
    Beta,
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        serde_json::from_value(Value::String(s.into())).map_err(|_| format!("unknown ablation axis '{s}' (expected N, K or beta)"))
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Channels => "N",
            Axis::InnerIters => "K",
            Axis::Beta => "beta",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirtSettings {
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FistaSettings {
    /// Fixed regularization weight; searched against the ground truth when
    /// absent.
    pub lambda: Option<f64>,
    pub iterations: usize,
    /// `[lo, hi, count]` of the geometric search grid.
    pub search: (f64, f64, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSettings {
    /// Trained model to load; one is trained from `corpus` otherwise.
    pub checkpoint: Option<PathBuf>,
    pub architecture: Architecture,
    pub schedule: NoiseSchedule,
    pub train: TrainConfig,
    /// Number of random head phantoms in the training corpus.
    pub corpus_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub sinogram: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ablation {
    pub axis: Axis,
    pub values: Vec<f64>,
    /// Seeds whose results are reported per value; the first is the run seed
    /// when empty.
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// Everything a command needs. Every random stream derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Views kept from the full scan.
    pub views: usize,
    pub method: Method,
    pub phantom: PhantomSpec,
    /// Full-scan geometry.
    pub geometry: FanBeamGeometry,
    pub noise_sigma: f64,
    pub sirt: SirtSettings,
    pub fista: FistaSettings,
    pub dosm: DosmConfig,
    pub score: ScoreSettings,
    pub inputs: Inputs,
    pub ablation: Option<Ablation>,
}

/// Top of the desk noise schedule, just above the contrast of the inner
/// head structures on a [0, 1] image.
pub const DESK_SIGMA_MAX: f64 = 0.1;

impl Default for RunConfig {
    fn default() -> Self {
        let mut dosm = DosmConfig::desk();
        dosm.sampler.schedule.sigma_max = DESK_SIGMA_MAX;
        let schedule = dosm.sampler.schedule;
        Self {
            seed: 0,
            views: 23,
            method: Method::Fbp,
            phantom: PhantomSpec::shepp_logan(64, 3.2),
            geometry: FanBeamGeometry::clinical_fan(720, 720),
            noise_sigma: 0.0,
            sirt: SirtSettings {
                iterations: schedule.n_steps * dosm.dc_inner_iters,
            },
            fista: FistaSettings {
                lambda: None,
                iterations: 100,
                search: (0.1, 1000.0, 13),
            },
            dosm,
            score: ScoreSettings {
                checkpoint: None,
                architecture: Architecture::default(),
                schedule,
                train: TrainConfig {
                    epochs: 200,
                    learning_rate: 1e-3,
                    final_learning_rate: Some(1e-5),
                    crop: Some(32),
                    ..TrainConfig::default()
                },
                corpus_size: 256,
            },
            inputs: Inputs {
                sinogram: None,
                truth: None,
            },
            ablation: None,
        }
    }
}

/// Stream-separated seed for one consumer of the master seed.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let h = dosmct::io::sha256_hex(format!("{seed}:{tag}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex")
}

impl RunConfig {
    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma: self.noise_sigma,
            seed: derive_seed(self.seed, "noise"),
            ..NoiseSpec::default()
        }
    }

    pub fn dosm_config(&self) -> DosmConfig {
        DosmConfig {
            seed: derive_seed(self.seed, "dosm"),
            ..self.dosm.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, "train"),
            ..self.score.train.clone()
        }
    }

    pub fn corpus_seed(&self) -> u64 {
        derive_seed(self.seed, "corpus")
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let bad = |e: dosmct::Error| Failure::Usage(format!("invalid config: {e}"));
        self.phantom.validate().map_err(bad)?;
        self.geometry.validate().map_err(bad)?;
        self.dosm.validate().map_err(bad)?;
        self.score.architecture.validate().map_err(bad)?;
        self.score.schedule.validate().map_err(bad)?;
        if self.views == 0 || self.views > self.geometry.n_views() {
            return Err(Failure::Usage(format!(
                "invalid config: views must be in 1..={}",
                self.geometry.n_views()
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Failure::Usage("invalid config: noise_sigma must be >= 0".into()));
        }
        if let Some(l) = self.fista.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Failure::Usage("invalid config: fista.lambda must be >= 0".into()));
            }
        }
        let (lo, hi, n) = self.fista.search;
        if !(lo > 0.0 && hi >= lo && n >= 1) {
            return Err(Failure::Usage("invalid config: fista.search must be [lo > 0, hi >= lo, count >= 1]".into()));
        }
        if self.score.corpus_size == 0 {
            return Err(Failure::Usage("invalid config: score.corpus_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Recursive merge; objects merge key by key, anything else replaces.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Values set on the command line, as a JSON overlay.
#[derive(Debug, Clone, Default)]
pub struct FlagOverrides {
    pub seed: Option<u64>,
    pub views: Option<usize>,
    pub method: Option<Method>,
    pub axis: Option<Axis>,
    pub values: Option<Vec<f64>>,
}

impl FlagOverrides {
    fn to_value(&self) -> Value {
        let mut v = serde_json::Map::new();
        if let Some(s) = self.seed {
            v.insert("seed".into(), s.into());
        }
        if let Some(n) = self.views {
            v.insert("views".into(), n.into());
        }
        if let Some(m) = self.method {
            v.insert("method".into(), serde_json::to_value(m).expect("serializable"));
        }
        if self.axis.is_some() || self.values.is_some() {
            let mut a = serde_json::Map::new();
            if let Some(x) = self.axis {
                a.insert("axis".into(), serde_json::to_value(x).expect("serializable"));
            }
            if let Some(vals) = &self.values {
                a.insert("values".into(), serde_json::to_value(vals).expect("serializable"));
            }
            v.insert("ablation".into(), Value::Object(a));
        }
        Value::Object(v)
    }
}

/// Defaults, then `flags`, then the file at `path`.
pub fn resolve(path: Option<&Path>, flags: &FlagOverrides) -> Result<RunConfig, Failure> {
    let mut value = serde_json::to_value(RunConfig::default()).expect("serializable");
    merge(&mut value, flags.to_value());
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
        let file: Value =
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {} is not valid JSON: {e}", p.display())))?;
        if !file.is_object() {
            return Err(Failure::Usage(format!("config {} must hold a JSON object", p.display())));
        }
        merge(&mut value, file);
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Failure::Usage(format!("invalid config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}
