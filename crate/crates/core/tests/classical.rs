mod common;

use common::{dense_system_matrix, least_squares, rel_err, SplitMix};
use dosmct::classical::{
    divergence, fbp, fista_tv, fista_tv_search, geometric_grid, gradient, ram_lak, sirt, sirt_step, total_variation, tv_prox,
    FistaConfig, RampFilter, StepSize, TV_PROX_ITERS,
};
use dosmct::real::dot;
use dosmct::geometry::{DetectorShape, FanBeamGeometry, Image, ImageGrid, Projector, Sinogram};
use dosmct::metrics::psnr;
use dosmct::phantom::{SUPERSAMPLE, make_phantom, simulate_measurement, subsample_views, NoiseSpec, PhantomKind, PhantomSpec, Shape};
use nalgebra::DVector;

fn disk(n: usize, pixel: f64, radius: f64) -> Image<f64> {
    make_phantom(&PhantomSpec {
        kind: PhantomKind::EllipseSet,
        size: [n, n],
        pixel_size: pixel,
        supersample: SUPERSAMPLE,
        shapes: vec![Shape {
            center: [0.0, 0.0],
            axes: [radius, radius],
            angle: 0.0,
            amplitude: 1.0,
        }],
    })
    .unwrap()
}

#[test]
fn fbp_parallel_full_view_disk() {
    let x = disk(128, 1.0, 40.0);
    let angles = FanBeamGeometry::half_circle_angles(720);
    let geom = FanBeamGeometry::parallel(512, 256.0, angles);
    let y = Projector::new(geom, x.grid).unwrap().forward(&x).unwrap();
    let full = psnr(&fbp(&y, &x.grid).unwrap(), &x, 1.0).unwrap();
    assert!(full > 30.0, "full-view PSNR {full}");

    let sparse = subsample_views(&y, 23).unwrap();
    let few = psnr(&fbp(&sparse, &x.grid).unwrap(), &x, 1.0).unwrap();
    assert!(few < full, "23-view {few} vs full {full}");
}

#[test]
fn fbp_fan_equiangular_and_flat_full_view_disk() {
    let x = disk(64, 3.2, 70.0);
    for shape in [DetectorShape::Equiangular, DetectorShape::Flat] {
        let mut geom = FanBeamGeometry::clinical_fan(512, 720);
        geom.detector = shape;
        let y = Projector::new(geom, x.grid).unwrap().forward(&x).unwrap();
        let p = psnr(&fbp(&y, &x.grid).unwrap(), &x, 1.0).unwrap();
        assert!(p > 30.0, "{shape:?}: PSNR {p}");
        let sparse = subsample_views(&y, 23).unwrap();
        let q = psnr(&fbp(&sparse, &x.grid).unwrap(), &x, 1.0).unwrap();
        assert!(q < p, "{shape:?}: 23-view {q} vs full {p}");
    }
}

#[test]
fn fbp_is_linear() {
    let geom = FanBeamGeometry::clinical_fan(96, 23);
    let grid = ImageGrid::square(32, 3.2).unwrap();
    let mut rng = SplitMix(11);
    let y = Sinogram::from_vec(geom, rng.vec(96 * 23)).unwrap();
    let a = 2.75;
    let lhs = fbp(&y.scaled(a), &grid).unwrap();
    let rhs = fbp(&y, &grid).unwrap().map(|v| a * v);
    assert!(rel_err(&lhs.values, &rhs.values) < 1e-13);
}

fn small_consistent_problem() -> (Projector, Image<f64>, Sinogram<f64>) {
    let grid = ImageGrid::square(8, 3.2).unwrap();
    let mut geom = FanBeamGeometry::clinical_fan(32, 30);
    geom.detector_width_total = 60.0;
    let mut rng = SplitMix(99);
    let x = Image::from_vec(grid, rng.vec(64)).unwrap();
    let p = Projector::new(geom, grid).unwrap();
    let y = p.forward(&x).unwrap();
    (p, x, y)
}

#[test]
fn sirt_matches_dense_least_squares_with_monotone_residual() {
    let (p, _x, y) = small_consistent_problem();
    let a = dense_system_matrix(p.geometry(), p.grid());
    let want = least_squares(&a, &y.values);
    let (got, hist) = sirt(&y, Image::zeros(*p.grid()), 500, &p).unwrap();
    for w in hist.windows(2) {
        assert!(w[1] <= w[0], "residual rose: {} -> {}", w[0], w[1]);
    }
    let err = rel_err(&got.values, &want);
    assert!(err < 1e-3, "relative error to least squares {err:e}");
}

#[test]
fn sirt_fixed_point_and_identical_channels() {
    let (p, x, y) = small_consistent_problem();
    let sw = p.sirt_weights::<f64>();

    let mut exact = vec![x.clone()];
    let r = sirt_step(&mut exact, &[1.0], &y, &sw, &p).unwrap();
    assert!(r < 1e-10 * y.values.iter().map(|v| v * v).sum::<f64>().sqrt());
    assert!(rel_err(&exact[0].values, &x.values) < 1e-12);

    let start = Image::from_vec(x.grid, SplitMix(5).vec(64)).unwrap();
    let mut one = vec![start.clone()];
    let mut three = vec![start.clone(), start.clone(), start];
    let third = 1.0 / 3.0;
    for _ in 0..5 {
        sirt_step(&mut one, &[1.0], &y, &sw, &p).unwrap();
        sirt_step(&mut three, &[third, third, third], &y, &sw, &p).unwrap();
    }
    for ch in &three {
        assert!(rel_err(&ch.values, &one[0].values) < 1e-13);
    }
}

#[test]
fn fista_without_regularization_reaches_least_squares() {
    let grid = ImageGrid::square(16, 3.2).unwrap();
    let geom = FanBeamGeometry::clinical_fan(96, 90);
    let p = Projector::new(geom, grid).unwrap();
    let x = Image::from_vec(grid, SplitMix(17).vec(grid.len())).unwrap();
    let y = p.forward(&x).unwrap();
    let cfg = FistaConfig {
        lambda: 0.0,
        n_iters: 400,
        step: StepSize::Auto,
    };
    let res = fista_tv(&y, &p, &cfg).unwrap();
    let f0 = res.objective[0];
    assert!(res.objective.iter().all(|&f| f <= f0));
    // the initial residual is ||y|| since x0 = 0
    let ax = p.forward(&res.image).unwrap();
    let r = rel_err(&ax.values, &y.values);
    assert!(r < 1e-3, "final residual ratio {r:e}");
}

#[test]
fn fista_objective_within_one_percent_of_dense_optimum() {
    // noisy data so that the least-squares optimum is strictly positive
    let grid = ImageGrid::square(12, 3.2).unwrap();
    let mut geom = FanBeamGeometry::clinical_fan(40, 36);
    geom.detector_width_total = 80.0;
    let p = Projector::new(geom, grid).unwrap();
    let x = Image::from_vec(grid, SplitMix(23).vec(grid.len())).unwrap();
    let noise = NoiseSpec {
        sigma: 0.5,
        seed: 4,
        ..NoiseSpec::default()
    };
    let y = simulate_measurement(&x, p.geometry(), &noise).unwrap();
    let a = dense_system_matrix(p.geometry(), &grid);
    let xs = least_squares(&a, &y.values);
    let r = &a * DVector::from_column_slice(&xs) - DVector::from_column_slice(&y.values);
    let f_star = 0.5 * r.norm_squared();
    assert!(f_star > 0.0);

    let res = fista_tv(
        &y,
        &p,
        &FistaConfig {
            lambda: 0.0,
            n_iters: 300,
            step: StepSize::Auto,
        },
    )
    .unwrap();
    let f = *res.objective.last().unwrap();
    assert!(res.objective.iter().all(|&v| v <= res.objective[0]));
    assert!(f <= 1.01 * f_star, "F = {f}, optimum {f_star}");
}

#[test]
fn fista_zero_data_gives_zero_image() {
    let grid = ImageGrid::square(16, 3.2).unwrap();
    let p = Projector::new(FanBeamGeometry::clinical_fan(64, 10), grid).unwrap();
    let y = Sinogram::<f64>::zeros(p.geometry().clone());
    for lambda in [0.0, 0.1, 10.0] {
        let res = fista_tv(
            &y,
            &p,
            &FistaConfig {
                lambda,
                n_iters: 10,
                step: StepSize::Auto,
            },
        )
        .unwrap();
        assert!(res.image.values.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn tuned_fista_beats_fbp_on_sparse_shepp_logan() {
    let x: Image<f64> = make_phantom(&PhantomSpec::shepp_logan(64, 3.2)).unwrap();
    let geom = FanBeamGeometry::clinical_fan(720, 720);
    let full = Projector::new(geom, x.grid).unwrap().forward(&x).unwrap();
    let y = subsample_views(&full, 23).unwrap();
    let p = Projector::new(y.geometry.clone(), x.grid).unwrap();
    let range = 1.0;
    let p_fbp = psnr(&fbp(&y, &x.grid).unwrap(), &x, range).unwrap();
    let cfg = FistaConfig {
        lambda: 0.0,
        n_iters: 100,
        step: StepSize::Auto,
    };
    let search = fista_tv_search(&y, &p, &cfg, &geometric_grid(1.0, 1e3, 7), &x, range).unwrap();
    let p_fista = search.scores.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    eprintln!("fbp {p_fbp:.2} dB, fista {p_fista:.2} dB, scores {:?}", search.scores);
    assert!(p_fista > p_fbp);
}

#[test]
fn fft_filter_matches_direct_convolution() {
    let n = 13;
    let a = 0.7;
    let f = RampFilter::new(n, &|k| ram_lak(k, a));
    let x: Vec<f64> = (0..n).map(|i| ((i * 37) % 11) as f64 - 4.0).collect();
    let mut got = vec![0.0; n];
    f.apply(&x, &mut got);
    for i in 0..n {
        let want: f64 = (0..n).map(|j| x[j] * ram_lak(i as i64 - j as i64, a)).sum();
        assert!((got[i] - want).abs() < 1e-10 * (1.0 + want.abs()));
    }
}

#[test]
fn fbp_of_zero_sinogram_is_zero() {
    let g = FanBeamGeometry::clinical_fan(64, 12);
    let grid = ImageGrid::square(16, 3.2).unwrap();
    let img = fbp(&Sinogram::<f64>::zeros(g), &grid).unwrap();
    assert!(img.values.iter().all(|&v| v == 0.0));
}

#[test]
fn fbp_rejects_single_detector() {
    let g = FanBeamGeometry::clinical_fan(1, 4);
    let grid = ImageGrid::square(8, 1.0).unwrap();
    assert!(fbp(&Sinogram::<f64>::zeros(g), &grid).is_err());
}

#[test]
fn divergence_is_negative_adjoint_of_gradient() {
    let (nx, ny) = (5, 4);
    let x: Vec<f64> = (0..20).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
    let px: Vec<f64> = (0..20).map(|i| ((i * 5) % 9) as f64 * 0.5).collect();
    let py: Vec<f64> = (0..20).map(|i| ((i * 11) % 4) as f64 - 1.0).collect();
    let (gx, gy) = gradient(&x, nx, ny);
    let lhs = dot(&gx, &px) + dot(&gy, &py);
    let rhs = -dot(&x, &divergence(&px, &py, nx, ny));
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn tv_prox_of_constant_is_identity_and_shrinks_tv() {
    let c = vec![0.7; 36];
    let p = tv_prox(&c, 6, 6, 0.3, TV_PROX_ITERS);
    assert!(p.iter().all(|v| (v - 0.7).abs() < 1e-12));

    let b: Vec<f64> = (0..36).map(|i| if (i % 6) < 3 { 0.0 } else { 1.0 }).collect();
    let p = tv_prox(&b, 6, 6, 0.2, TV_PROX_ITERS);
    assert!(total_variation(&p, 6, 6) < total_variation(&b, 6, 6));
    let mb: f64 = b.iter().sum();
    let mp: f64 = p.iter().sum();
    assert!((mb - mp).abs() < 1e-9);
}

#[test]
fn geometric_grid_endpoints() {
    let g = geometric_grid(1e-3, 1e1, 5);
    assert_eq!(g.len(), 5);
    assert!((g[0] - 1e-3).abs() < 1e-18 && (g[4] - 10.0).abs() < 1e-12);
    assert!((g[2] - 0.1).abs() < 1e-12);
}
