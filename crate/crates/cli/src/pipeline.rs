use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use dosmct::classical::{fbp, fista_tv, fista_tv_search, geometric_grid, sirt, FistaConfig, StepSize};
use dosmct::dosm::{self, DosmConfig, ReconTrace};
use dosmct::geometry::{Image, Projector};
use dosmct::io::{auto_window, read_image, read_sinogram, write_image, write_pgm, write_sinogram};
use dosmct::metrics::{metric_table_csv, MetricReport, MetricRow};
use dosmct::phantom::{make_phantom, random_head_phantoms, simulate_measurement, subsample_views};
use dosmct::score::{dsm_train, load_checkpoint, save_checkpoint, TrainReport};
use dosmct::{Denoiser32 as Model, Image32, Sinogram32};
use serde::{Deserialize, Serialize};

use crate::config::{derive_seed, Axis, Method, RunConfig};
use crate::manifest::{read_manifest, FileDigest, Manifest, Recorder};
use crate::Failure;

/// Measured data and, when known, the image behind it.
#[derive(Debug, Clone)]
pub struct Scene {
    pub truth: Option<Image32>,
    pub sparse: Sinogram32,
    pub projector: Projector,
}

impl Scene {
    /// Metrics need a reference range; the truth span is used.
    pub fn data_range(&self) -> Option<f64> {
        self.truth.as_ref().map(|t| {
            let (lo, hi) = t.min_max();
            (hi - lo) as f64
        })
    }
}

/// Phantom, full-scan sinogram and its sparse subset.
pub fn simulate(cfg: &RunConfig) -> Result<(Image32, Sinogram32, Sinogram32), Failure> {
    let truth: Image32 = make_phantom(&cfg.phantom)?;
    let full = simulate_measurement(&truth, &cfg.geometry, &cfg.noise())?;
    let sparse = subsample_views(&full, cfg.views)?;
    Ok((truth, full, sparse))
}

/// Reads the configured inputs, simulating whatever is missing.
pub fn load_scene(cfg: &RunConfig) -> Result<Scene, Failure> {
    let (truth, sparse) = match &cfg.inputs.sinogram {
        Some(p) => {
            let truth = match &cfg.inputs.truth {
                Some(t) => Some(read_image(t)?),
                None => None,
            };
            (truth, read_sinogram(p)?)
        }
        None => {
            if cfg.inputs.truth.is_some() {
                return Err(Failure::Usage("inputs.truth needs inputs.sinogram".into()));
            }
            let (t, _, s) = simulate(cfg)?;
            (Some(t), s)
        }
    };
    let grid = match &truth {
        Some(t) => t.grid,
        None => cfg.phantom.grid()?,
    };
    let projector = Projector::new(sparse.geometry.clone(), grid)?;
    Ok(Scene {
        truth,
        sparse,
        projector,
    })
}

/// Trains a fresh model on random head phantoms at the phantom's resolution.
pub fn train_model(cfg: &RunConfig) -> Result<(Model, TrainReport), Failure> {
    let grid = cfg.phantom.grid()?;
    if grid.nx != grid.ny {
        return Err(Failure::Usage("score training needs a square phantom grid".into()));
    }
    let data: Vec<Image32> = random_head_phantoms(grid.nx, grid.pixel_size, cfg.score.corpus_size, cfg.corpus_seed())?;
    let mut model = Model::new(cfg.score.architecture.clone(), derive_seed(cfg.seed, "init"))?;
    let report = dsm_train(&mut model, &data, &cfg.score.schedule, &cfg.train_config())?;
    Ok((model, report))
}

/// Loads the configured checkpoint or trains a model.
pub fn score_model(cfg: &RunConfig, rec: &mut Recorder) -> Result<Model, Failure> {
    match &cfg.score.checkpoint {
        Some(p) => {
            rec.input(p)?;
            Ok(rec.time("load_score", || load_checkpoint(p))?)
        }
        None => {
            let (m, _) = rec.time("train_score", || train_model(cfg))?;
            Ok(m)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: Image32,
    pub trace: Option<ReconTrace>,
    /// SIRT residual per iteration.
    pub residuals: Option<Vec<f32>>,
    /// λ used by FISTA, searched or configured.
    pub lambda: Option<f64>,
}

impl Reconstruction {
    fn image(image: Image32) -> Self {
        Self {
            image,
            trace: None,
            residuals: None,
            lambda: None,
        }
    }
}

pub fn needs_score(method: Method) -> bool {
    matches!(method, Method::Dosm | Method::Pc)
}

/// Runs one method on `scene`. `score` is required by the sampling methods.
pub fn reconstruct(cfg: &RunConfig, method: Method, scene: &Scene, score: Option<&Model>) -> Result<Reconstruction, Failure> {
    let grid = *scene.projector.grid();
    let need_score = || score.ok_or_else(|| Failure::Runtime(format!("{method} needs a score model")));
    match method {
        Method::Fbp => Ok(Reconstruction::image(fbp(&scene.sparse, &grid)?)),
        Method::Sirt => {
            let (x, res) = sirt(&scene.sparse, Image::zeros(grid), cfg.sirt.iterations, &scene.projector)?;
            Ok(Reconstruction {
                residuals: Some(res),
                ..Reconstruction::image(x)
            })
        }
        Method::Fista => {
            let base = FistaConfig {
                lambda: 0.0,
                n_iters: cfg.fista.iterations,
                step: StepSize::Auto,
            };
            let (image, lambda) = match (cfg.fista.lambda, &scene.truth) {
                (Some(lambda), _) => (fista_tv(&scene.sparse, &scene.projector, &FistaConfig { lambda, ..base })?.image, lambda),
                (None, Some(truth)) => {
                    let (lo, hi, n) = cfg.fista.search;
                    let range = scene.data_range().expect("truth present");
                    let s = fista_tv_search(&scene.sparse, &scene.projector, &base, &geometric_grid(lo, hi, n), truth, range)?;
                    (s.best.image, s.best_lambda)
                }
                (None, None) => {
                    return Err(Failure::Usage("fista needs fista.lambda when no ground truth is available".into()))
                }
            };
            Ok(Reconstruction {
                lambda: Some(lambda),
                ..Reconstruction::image(image)
            })
        }
        Method::Dosm => {
            let (x, trace) = dosm::reconstruct(&scene.sparse, &scene.projector, need_score()?, &cfg.dosm_config(), scene.truth.as_ref())?;
            Ok(Reconstruction {
                trace: Some(trace),
                ..Reconstruction::image(x)
            })
        }
        Method::Pc => {
            let d = cfg.dosm_config();
            let mut chains = dosm::pc_sample(need_score()?, grid, &d.sampler, d.seed, 1)?;
            Ok(Reconstruction::image(chains.remove(0)))
        }
    }
}

fn preview(rec: &mut Recorder, name: &str, values: &[f32], width: usize, height: usize, window: [f64; 2]) -> Result<(), Failure> {
    let p = rec.output(name);
    write_pgm(&p, values, width, height, window)?;
    Ok(())
}

fn truth_window(truth: &Image32) -> [f64; 2] {
    let (lo, hi) = truth.min_max();
    [lo as f64, hi as f64]
}

/// Phantom, full and sparse sinograms, previews.
pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<Manifest, Failure> {
    let mut rec = Recorder::new(out)?;
    let (truth, full, sparse) = rec.time("simulate", || simulate(cfg))?;
    let w = truth_window(&truth);
    write_image(&rec.array("phantom"), &truth, Some(w))?;
    let sw = auto_window(&full.values);
    write_sinogram(&rec.array("sinogram_full"), &full, Some(sw))?;
    write_sinogram(&rec.array("sinogram_sparse"), &sparse, Some(sw))?;
    preview(&mut rec, "phantom.pgm", &truth.values, truth.grid.nx, truth.grid.ny, w)?;
    let g = &sparse.geometry;
    preview(&mut rec, "sinogram_sparse.pgm", &sparse.values, g.n_detectors, g.n_views(), sw)?;
    rec.finish("simulate", cfg)
}

fn write_reconstruction(rec: &mut Recorder, stem: &str, scene: &Scene, r: &Reconstruction) -> Result<Option<MetricReport>, Failure> {
    let grid = r.image.grid;
    let window = scene.truth.as_ref().map(truth_window).unwrap_or_else(|| auto_window(&r.image.values));
    write_image(&rec.array(stem), &r.image, Some(window))?;
    preview(rec, &format!("{stem}.pgm"), &r.image.values, grid.nx, grid.ny, window)?;
    let Some(truth) = &scene.truth else {
        return Ok(None);
    };
    let mut diff = r.image.clone();
    diff.axpy(-1.0, truth);
    write_image(&rec.array(&format!("{stem}_difference")), &diff, None)?;
    Ok(Some(MetricReport::evaluate(&r.image, truth, scene.data_range())?))
}

/// One reconstruction with metrics and, for DOSM, the per-step trace.
pub fn cmd_reconstruct(cfg: &RunConfig, out: &Path) -> Result<Manifest, Failure> {
    let mut rec = Recorder::new(out)?;
    let scene = rec.time("load", || load_scene(cfg))?;
    register_scene_inputs(cfg, &mut rec)?;
    let model = if needs_score(cfg.method) {
        Some(score_model(cfg, &mut rec)?)
    } else {
        None
    };
    let r = rec.time("reconstruct", || reconstruct(cfg, cfg.method, &scene, model.as_ref()))?;
    let report = write_reconstruction(&mut rec, "recon", &scene, &r)?;
    if let Some(m) = report {
        let row = MetricRow {
            method: cfg.method.to_string(),
            views: scene.sparse.geometry.n_views(),
            psnr: m.psnr,
            ssim: m.ssim,
        };
        fs::write(rec.output("metrics.csv"), metric_table_csv(&[row]))?;
    }
    if let Some(t) = &r.trace {
        t.write_csv(&rec.output("trace.csv"))?;
    }
    if let Some(res) = &r.residuals {
        let mut s = String::from("iteration,residual\n");
        for (k, v) in res.iter().enumerate() {
            let _ = writeln!(s, "{k},{v:e}");
        }
        fs::write(rec.output("trace.csv"), s)?;
    }
    if let Some(l) = r.lambda {
        fs::write(rec.output("fista_lambda.txt"), format!("{l:e}\n"))?;
    }
    rec.finish("reconstruct", cfg)
}

fn register_scene_inputs(cfg: &RunConfig, rec: &mut Recorder) -> Result<(), Failure> {
    for p in [&cfg.inputs.sinogram, &cfg.inputs.truth].into_iter().flatten() {
        rec.input(&p.with_extension("f32raw"))?;
        rec.input(&p.with_extension("json"))?;
    }
    Ok(())
}

/// Trains a score model and writes its checkpoint and loss curve.
pub fn cmd_train_score(cfg: &RunConfig, out: &Path) -> Result<Manifest, Failure> {
    let mut rec = Recorder::new(out)?;
    let (model, report) = rec.time("train_score", || train_model(cfg))?;
    save_checkpoint(&rec.output("score.ckpt"), &model)?;
    let mut s = String::from("epoch,loss\n");
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(s, "{},{l:e}", e + 1);
    }
    fs::write(rec.output("loss.csv"), s)?;
    rec.finish("train-score", cfg)
}

/// One ablation measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub seed: u64,
    pub psnr: f64,
    pub ssim: f64,
}

/// `cfg.dosm` with the ablated quantity set to `value`.
pub fn ablated(base: &DosmConfig, axis: Axis, value: f64) -> Result<DosmConfig, Failure> {
    let count = |v: f64| {
        if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Failure::Usage(format!("ablation value {v} for {axis} must be a whole number")))
        }
    };
    let mut d = base.clone();
    match axis {
        Axis::Channels => {
            d.n_channels = count(value)?;
            d.weights = None;
        }
        Axis::InnerIters => d.dc_inner_iters = count(value)?,
        Axis::Beta => d.beta = value,
    }
    d.validate().map_err(|e| Failure::Usage(format!("ablation value {value} for {axis}: {e}")))?;
    Ok(d)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// DOSM over every ablation value and seed; one recon per pair, a full table
/// and a per-value median summary sorted by value.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<Manifest, Failure> {
    let ab = cfg
        .ablation
        .as_ref()
        .ok_or_else(|| Failure::Usage("ablate needs an ablation axis and values".into()))?;
    if ab.values.is_empty() {
        return Err(Failure::Usage("ablation value list is empty".into()));
    }
    let mut values = ab.values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let configs = values
        .iter()
        .map(|&v| ablated(&cfg.dosm, ab.axis, v))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = if ab.seeds.is_empty() { vec![cfg.seed] } else { ab.seeds.clone() };
    let mut rec = Recorder::new(out)?;
    let scene = rec.time("load", || load_scene(cfg))?;
    register_scene_inputs(cfg, &mut rec)?;
    let Some(truth) = &scene.truth else {
        return Err(Failure::Usage("ablate needs a ground truth".into()));
    };
    let range = scene.data_range().expect("truth present");
    let model = score_model(cfg, &mut rec)?;
    let mut rows = Vec::new();
    for (&value, d) in values.iter().zip(&configs) {
        for &seed in &seeds {
            let dc = DosmConfig {
                seed: derive_seed(seed, "dosm"),
                ..d.clone()
            };
            let (x, _) = rec.time("reconstruct", || dosm::reconstruct(&scene.sparse, &scene.projector, &model, &dc, None))?;
            let stem = format!("recon_{}{}_seed{seed}", ab.axis, value.to_string().replace('.', "p"));
            write_image(&rec.array(&stem), &x, Some(truth_window(truth)))?;
            let m = MetricReport::evaluate(&x, truth, Some(range))?;
            rows.push(AblationRow {
                value,
                seed,
                psnr: m.psnr,
                ssim: m.ssim,
            });
        }
    }
    let mut table = format!("{},seed,psnr,ssim\n", ab.axis);
    for r in &rows {
        let _ = writeln!(table, "{},{},{},{}", r.value, r.seed, r.psnr, r.ssim);
    }
    fs::write(rec.output("ablation.csv"), table)?;
    let mut summary = format!("{},median_psnr,median_ssim\n", ab.axis);
    for &v in &values {
        let mut p: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.psnr).collect();
        let mut s: Vec<f64> = rows.iter().filter(|r| r.value == v).map(|r| r.ssim).collect();
        let _ = writeln!(summary, "{v},{},{}", median(&mut p), median(&mut s));
    }
    fs::write(rec.output("ablation_summary.csv"), summary)?;
    rec.finish("ablate", cfg)
}

pub fn run_command(command: &str, cfg: &RunConfig, out: &Path) -> Result<Manifest, Failure> {
    match command {
        "simulate" => cmd_simulate(cfg, out),
        "reconstruct" => cmd_reconstruct(cfg, out),
        "train-score" => cmd_train_score(cfg, out),
        "ablate" => cmd_ablate(cfg, out),
        other => Err(Failure::Usage(format!("manifest names unknown command '{other}'"))),
    }
}

/// Repeats the run recorded in a manifest. Inputs must be unchanged.
pub fn cmd_rerun(manifest: &Path, out: &Path) -> Result<Manifest, Failure> {
    let m = read_manifest(manifest)?;
    m.config.validate()?;
    for input in &m.inputs {
        let now = FileDigest::of(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Failure::Runtime(format!("input {} changed since the recorded run", input.path.display())));
        }
    }
    run_command(&m.command, &m.config, out)
}
