mod common;

use common::{dense_system_matrix, least_squares, rel_err};
use dosmct::classical::sirt;
use dosmct::dosm::*;
use dosmct::geometry::{FanBeamGeometry, Image, ImageGrid, Projector, Sinogram};
use dosmct::score::*;
use dosmct::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

fn grid(n: usize) -> ImageGrid {
    ImageGrid::square(n, 1.0).unwrap()
}

fn random_image(g: ImageGrid, rng: &mut ChaCha20Rng) -> Image<f64> {
    Image::from_vec(g, (0..g.len()).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn sampler(t: usize) -> SamplerConfig {
    SamplerConfig {
        schedule: NoiseSchedule::new(0.01, 50.0, t).unwrap(),
        ..Default::default()
    }
}

/// Consistent 8x8 problem with 30 fan views.
fn consistent_problem() -> (Projector, Image<f64>, Sinogram<f64>) {
    let g = ImageGrid::square(8, 4.0).unwrap();
    let mut geom = FanBeamGeometry::clinical_fan(32, 30);
    geom.detector_width_total = 60.0;
    let p = Projector::new(geom, g).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let x = Image::from_vec(g, (0..64).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    let y = p.forward(&x).unwrap();
    (p, x, y)
}

#[test]
fn estimate_of_single_and_identical_channels() {
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let x = random_image(grid(5), &mut rng);
    let one = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
    assert_eq!(estimate_x0(&one).unwrap(), x);
    let four = ChannelEnsemble::uniform(vec![x.clone(); 4]).unwrap();
    assert_eq!(estimate_x0(&four).unwrap(), x);
}

#[test]
fn ensemble_rejects_bad_weights_and_grids() {
    let g = grid(3);
    let x = Image::zeros(g);
    assert!(ChannelEnsemble::<f64>::new(vec![x.clone(), x.clone()], vec![0.7, 0.7]).is_err());
    assert!(ChannelEnsemble::<f64>::new(vec![x.clone(), x.clone()], vec![1.5, -0.5]).is_err());
    assert!(ChannelEnsemble::<f64>::new(vec![x.clone(), Image::zeros(grid(4))], vec![0.5, 0.5]).is_err());
    assert!(ChannelEnsemble::<f64>::new(vec![], vec![]).is_err());
    assert!(ChannelEnsemble::<f64>::new(vec![x.clone(), x], vec![0.25, 0.75]).is_ok());
}

#[test]
fn predictor_formula_without_noise() {
    let g = grid(4);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let x = random_image(g, &mut rng);
    let mut cfg = sampler(10);
    cfg.noise_injection = false;
    let mut rngs = vec![channel_rng(0, 0)];

    let mut ens = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
    predictor_step(&mut ens, 6, &ZeroScore, &cfg, &mut rngs).unwrap();
    assert_eq!(ens.u[0], x);

    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.5), 0.3).unwrap();
    predictor_step(&mut ens, 6, &prior, &cfg, &mut rngs).unwrap();
    let (hi, lo) = (cfg.schedule.sigma_at(6).unwrap(), cfg.schedule.sigma_at(5).unwrap());
    for (u, xv) in ens.u[0].values.iter().zip(&x.values) {
        let want = xv - (hi * hi - lo * lo) * (xv - 0.5) / (0.3 + hi * hi);
        assert!((u - want).abs() < 1e-12 * (1.0 + want.abs()));
    }
}

#[test]
fn predictor_with_vanishing_increment_is_identity() {
    let g = grid(4);
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let x = random_image(g, &mut rng);
    let cfg = SamplerConfig {
        schedule: NoiseSchedule::new(1.0, 1.0 + 1e-15, 2).unwrap(),
        ..Default::default()
    };
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.0), 1.0).unwrap();
    let mut ens = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
    predictor_step(&mut ens, 1, &prior, &cfg, &mut [channel_rng(3, 0)]).unwrap();
    for (u, xv) in ens.u[0].values.iter().zip(&x.values) {
        assert!((u - xv).abs() < 1e-6);
    }
}

#[test]
fn predictor_moves_toward_delta_prior() {
    let g = grid(6);
    let mu = 0.7;
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(mu), 1e-12).unwrap();
    let cfg = sampler(30);
    let i = 25;
    let sigma = cfg.schedule.sigma_at(i).unwrap();
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..100 {
        let mut rng = ChaCha20Rng::seed_from_u64(1000 + seed);
        let x = random_image(g, &mut rng).map(|v| mu + sigma * v);
        let mut ens = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
        predictor_step(&mut ens, i, &prior, &cfg, &mut [channel_rng(seed, 0)]).unwrap();
        before += x.map(|v| v - mu).norm();
        after += ens.u[0].map(|v| v - mu).norm();
    }
    assert!(after < before, "{after} vs {before}");
}

#[test]
fn predictor_and_corrector_are_deterministic() {
    let g = grid(5);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let xs: Vec<Image<f64>> = (0..3).map(|_| random_image(g, &mut rng)).collect();
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.0), 1.0).unwrap();
    let cfg = sampler(20);
    let run = || {
        let mut ens = ChannelEnsemble::uniform(xs.clone()).unwrap();
        let mut rngs: Vec<_> = (0..3).map(|n| channel_rng(42, n)).collect();
        predictor_step(&mut ens, 10, &prior, &cfg, &mut rngs).unwrap();
        corrector_step(&mut ens, 10, &prior, &cfg, &mut rngs).unwrap();
        ens
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_ne!(a.u[0], a.u[1]);
}

#[test]
fn corrector_skips_on_zero_score() {
    let g = grid(4);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let x = random_image(g, &mut rng);
    let mut cfg = sampler(10);
    cfg.n_corrector_steps = 3;
    let mut ens = ChannelEnsemble::uniform(vec![x.clone(), x.clone()]).unwrap();
    let mut rngs = vec![channel_rng(0, 0), channel_rng(0, 1)];
    let skips = corrector_step(&mut ens, 4, &ZeroScore, &cfg, &mut rngs).unwrap();
    assert_eq!(skips, 3);
    assert_eq!(ens.u, vec![x.clone(), x]);
}

#[test]
fn corrector_step_size_follows_snr_rule() {
    let g = grid(3);
    let x = Image::filled(g, 2.0);
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.0), 1.0).unwrap();
    let mut cfg = sampler(10);
    let mut ens = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
    let mut rng = channel_rng(9, 0);
    let mut probe = rng.clone();
    corrector_step(&mut ens, 3, &prior, &cfg, std::slice::from_mut(&mut rng)).unwrap();
    let z: Vec<f64> = (0..9).map(|_| probe.sample(StandardNormal)).collect();
    let sigma = cfg.schedule.sigma_at(3).unwrap();
    let s = -2.0 / (1.0 + sigma * sigma);
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 2.0 * (cfg.corrector_snr * z_norm / (3.0 * s.abs())).powi(2);
    for (u, zi) in ens.u[0].values.iter().zip(&z) {
        let want = 2.0 + eps * s + (2.0 * eps).sqrt() * zi;
        assert!((u - want).abs() < 1e-12);
    }
    cfg.noise_injection = false;
    let mut ens = ChannelEnsemble::uniform(vec![x.clone()]).unwrap();
    corrector_step(&mut ens, 3, &prior, &cfg, &mut [channel_rng(9, 0)]).unwrap();
    assert_eq!(ens.u[0], x);
}

#[test]
fn sweep_with_zero_iterations_is_identity() {
    let (p, _, y) = consistent_problem();
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let xs: Vec<Image<f64>> = (0..3).map(|_| random_image(*p.grid(), &mut rng)).collect();
    let mut ens = ChannelEnsemble::uniform(xs.clone()).unwrap();
    let sw = p.sirt_weights();
    assert!(data_consistency_sweep(&mut ens, &y, &sw, &p, 0).unwrap().is_empty());
    assert_eq!(ens.x, xs);
}

#[test]
fn sweep_reaches_dense_least_squares() {
    let (p, _, y) = consistent_problem();
    let a = dense_system_matrix(p.geometry(), p.grid());
    let oracle = least_squares(&a, &y.values);
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let xs: Vec<Image<f64>> = (0..3).map(|_| random_image(*p.grid(), &mut rng).map(|v| 0.1 * v)).collect();
    let mut ens = ChannelEnsemble::new(xs, vec![0.5, 0.3, 0.2]).unwrap();
    let sw = p.sirt_weights();
    let res = data_consistency_sweep(&mut ens, &y, &sw, &p, 200).unwrap();
    assert!(res.windows(2).all(|w| w[1] <= w[0]), "residual not monotone");
    let est = estimate_x0(&ens).unwrap();
    let err = rel_err(&est.values, &oracle);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn coupling_limits() {
    let g = grid(4);
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let x = random_image(g, &mut rng);
    let u = random_image(g, &mut rng);
    let ens0 = ChannelEnsemble {
        x: vec![x.clone()],
        u: vec![u.clone()],
        weights: vec![1.0],
    };

    let mut e = ens0.clone();
    coupling_step(&mut e, 0.0, Coupling::Proximal);
    assert_eq!(e.x[0], x);

    let mut e = ens0.clone();
    coupling_step(&mut e, 1e9, Coupling::Proximal);
    for (a, b) in e.x[0].values.iter().zip(&u.values) {
        assert!((a - b).abs() < 1e-6);
    }

    let mut e = ens0.clone();
    coupling_step(&mut e, 1.0, Coupling::Proximal);
    for ((a, xv), uv) in e.x[0].values.iter().zip(&x.values).zip(&u.values) {
        assert_eq!(*a, (xv + uv) / 2.0);
    }

    let mut e = ens0;
    coupling_step(&mut e, 0.5, Coupling::Literal);
    for ((a, xv), uv) in e.x[0].values.iter().zip(&x.values).zip(&u.values) {
        assert!((a - (xv + 0.5 * (xv - uv))).abs() < 1e-15);
    }
}

/// Sinogram of a 2x1 image with a single parallel ray.
fn dummy_problem() -> (Projector, Sinogram<f64>) {
    let g = ImageGrid::new(2, 1, 1.0).unwrap();
    let p = Projector::new(FanBeamGeometry::parallel(1, 1.0, vec![0.0]), g).unwrap();
    let y = Sinogram::zeros(p.geometry().clone());
    (p, y)
}

#[test]
fn degenerate_config_is_pc_sampling() {
    let (p, y) = dummy_problem();
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.0), 1.0).unwrap();
    let mut cfg = DosmConfig {
        n_channels: 1,
        dc_inner_iters: 0,
        beta: 0.0,
        seed: 17,
        ..DosmConfig::desk()
    };
    cfg.sampler.schedule.n_steps = 50;
    let (x, trace) = reconstruct(&y, &p, &prior, &cfg, None).unwrap();
    let pc = pc_sample(&prior, *p.grid(), &cfg.sampler, 17, 1).unwrap();
    assert_eq!(x, pc[0]);
    assert_eq!(trace.records.len(), 50);

    cfg.n_channels = 3;
    let run = run(&y, &p, &prior, &cfg, None).unwrap();
    let pc = pc_sample(&prior, *p.grid(), &cfg.sampler, 17, 3).unwrap();
    assert_eq!(run.ensemble.x, pc);
}

#[test]
fn zero_score_without_noise_is_sirt() {
    let (p, _, y) = consistent_problem();
    let mut cfg = DosmConfig {
        n_channels: 1,
        dc_inner_iters: 4,
        beta: 0.0,
        ..DosmConfig::desk()
    };
    cfg.sampler.noise_injection = false;
    cfg.sampler.schedule.n_steps = 25;
    let (x, trace) = reconstruct(&y, &p, &ZeroScore, &cfg, None).unwrap();
    let (want, _) = sirt(&y, Image::zeros(*p.grid()), 100, &p).unwrap();
    assert_eq!(x, want);
    assert_eq!(trace.total_skips(), 25);

    cfg.n_channels = 3;
    let (x3, _) = reconstruct(&y, &p, &ZeroScore, &cfg, None).unwrap();
    assert!(rel_err(&x3.values, &want.values) < 1e-12);
}

#[test]
fn residual_decreases_in_median() {
    let (p, truth, y) = consistent_problem();
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.5), 0.1).unwrap();
    let t = 40;
    let (mut early, mut late) = (Vec::new(), Vec::new());
    for seed in 0..21 {
        let mut cfg = DosmConfig {
            n_channels: 2,
            dc_inner_iters: 2,
            seed,
            ..DosmConfig::desk()
        };
        cfg.sampler.schedule = NoiseSchedule::new(0.01, 50.0, t).unwrap();
        let (_, trace) = reconstruct(&y, &p, &prior, &cfg, Some(&truth)).unwrap();
        early.push(trace.record(t - 1).unwrap().residual);
        late.push(trace.record(t / 10).unwrap().residual);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(|a, b| a.total_cmp(b));
        v[v.len() / 2]
    };
    let (e, l) = (median(&mut early), median(&mut late));
    assert!(l < e, "late {l} vs early {e}");
}

#[test]
fn reconstruction_is_deterministic_across_thread_counts() {
    let (p, truth, y) = consistent_problem();
    let prior = GaussianMixturePrior::single(MixtureMean::Scalar(0.5), 0.1).unwrap();
    let mut cfg = DosmConfig {
        n_channels: 4,
        dc_inner_iters: 3,
        seed: 5,
        ..DosmConfig::desk()
    };
    cfg.sampler.schedule.n_steps = 20;
    let in_pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| reconstruct(&y, &p, &prior, &cfg, Some(&truth)).unwrap())
    };
    let (a, ta) = in_pool(1);
    let (b, tb) = in_pool(3);
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(ta.to_csv(), tb.to_csv());
}

struct NanBelow(usize);

impl ScoreFunction<f64> for NanBelow {
    fn score(&self, x: &Image<f64>, level: NoiseLevel) -> dosmct::Result<Image<f64>> {
        let v = if level.step < self.0 { f64::NAN } else { 0.0 };
        Ok(Image::filled(x.grid, v))
    }
}

#[test]
fn non_finite_score_reports_step() {
    let (p, y) = dummy_problem();
    let mut cfg = DosmConfig::desk();
    cfg.sampler.schedule.n_steps = 12;
    match reconstruct(&y, &p, &NanBelow(5), &cfg, None) {
        Err(Error::AtStep { step, .. }) => assert_eq!(step, 4),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn trace_csv_layout() {
    let (p, truth, y) = consistent_problem();
    let mut cfg = DosmConfig {
        n_channels: 2,
        ..DosmConfig::desk()
    };
    cfg.sampler.schedule.n_steps = 6;
    let (_, trace) = reconstruct(&y, &p, &ZeroScore, &cfg, Some(&truth)).unwrap();
    let csv = trace.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,sigma,residual,psnr,ssim,skips,norm_0,norm_1");
    assert_eq!(lines.len(), 7);
    assert!(lines[1].starts_with("5,"));
    let steps: Vec<usize> = trace.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![5, 4, 3, 2, 1, 0]);
    // 8x8 is too small for the SSIM window
    assert!(trace.records.iter().all(|r| r.psnr.is_some() && r.ssim.is_none()));
}

#[test]
fn config_validation() {
    let ok = DosmConfig::desk();
    assert_eq!((ok.n_channels, ok.dc_inner_iters, ok.beta), (5, 20, 0.1));
    assert_eq!(ok.sampler.schedule.n_steps, 200);
    assert_eq!(DosmConfig::default().sampler.schedule.n_steps, 2000);
    assert!(ok.validate().is_ok());
    assert!(DosmConfig { n_channels: 0, ..ok.clone() }.validate().is_err());
    assert!(DosmConfig { beta: -0.1, ..ok.clone() }.validate().is_err());
    assert!(DosmConfig {
        weights: Some(vec![0.5; 5]),
        ..ok.clone()
    }
    .validate()
    .is_err());
    assert!(DosmConfig {
        weights: Some(vec![0.5, 0.5]),
        ..ok.clone()
    }
    .validate()
    .is_err());
    let json = serde_json::to_string(&ok).unwrap();
    let back: DosmConfig = serde_json::from_str(&json).unwrap();
    assert_eq!(back, ok);
}
