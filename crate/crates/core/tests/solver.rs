use dilute_homog::corrector::*;
use dilute_homog::extrapolation::richardson;
use dilute_homog::microstructure::*;
use dilute_homog::point_process::*;
use dilute_homog::single_inclusion::*;
use dilute_homog::Tensor;
use proptest::prelude::*;

fn torus(d: usize, l: f64) -> TorusSpec<f64> {
    TorusSpec::new(d, l).unwrap()
}

fn centered(l: f64, d: usize) -> PointSample<f64> {
    PointSample::from_centers(torus(d, l), ProcessSpec::Poisson { lambda: 1e-3 }, 0, &[vec![l / 2.0; d]]).unwrap()
}

fn poisson_field(lambda: f64, seed: u64, phases: PhaseModel<f64>, n: usize) -> GridField<f64> {
    let s = sample_poisson(lambda, &torus(phases.dim(), 16.0), seed).unwrap();
    GridField::rasterize(&s, phases, n).unwrap()
}

#[test]
fn laminate_3d_means_at_high_contrast() {
    let t = torus(3, 16.0);
    let phases = PhaseModel::isotropic(1.0, 100.0, 3).unwrap();
    let f = GridField::laminate(t, 64, phases, 0, 8, 4).unwrap();
    let harmonic = 2.0 * 100.0 / 101.0;
    let arithmetic = 50.5;
    for cfg in [SolverConfig::default().with_tol(1e-12), SolverConfig::fixed_point().with_tol(1e-12)] {
        let a = effective_tensor(&f, &cfg).unwrap().abar;
        assert!((a.get(0, 0) - harmonic).abs() < 1e-10 * harmonic, "{a}");
        assert!((a.get(1, 1) - arithmetic).abs() < 1e-10 * arithmetic);
        assert!((a.get(2, 2) - arithmetic).abs() < 1e-10 * arithmetic);
        assert!(a.get(0, 1).abs() < 1e-10);
    }
}

#[test]
fn contrast_free_inclusions_give_matrix_conductivity() {
    let p = PhaseModel::isotropic(1.7, 1.7, 2).unwrap();
    let f = poisson_field(0.05, 2, p, 64);
    let a = effective_tensor(&f, &SolverConfig::default()).unwrap().abar;
    assert!((a - Tensor::scaled_identity(2, 1.7)).max_abs() < 1e-12);
}

#[test]
fn centered_inclusion_slope_after_side_extrapolation() {
    let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
    let cfg = SolverConfig::default().with_tol(1e-10);
    let slope = |l: f64, n: usize| {
        let f = GridField::rasterize(&centered(l, 2), p, n).unwrap();
        let a = effective_tensor(&f, &cfg).unwrap().abar;
        (a.get(0, 0) - 1.0) / f.volume_fraction()
    };
    let s16 = slope(16.0, 512);
    let s32 = slope(32.0, 1024);
    let limit = richardson(1.0 / 256.0, s16, 1.0 / 1024.0, s32);
    assert!((limit / (2.0 / 3.0) - 1.0).abs() < 0.03, "{s16} {s32} {limit}");
}

#[test]
fn inclusion_flux_resums_to_effective_tensor() {
    let p = PhaseModel::isotropic(1.0, 3.0, 2).unwrap();
    let s = sample_poisson(0.04, &torus(2, 16.0), 9).unwrap();
    let f = GridField::rasterize(&s, p, 128).unwrap();
    let sol = solve_all(&f, &SolverConfig::default()).unwrap();
    let clusters = cluster_decomposition(&s);
    for dir in &sol.directions {
        let flux = inclusion_flux_average(&f, dir, &s, &clusters).unwrap();
        for k in 0..2 {
            let e = if k == dir.direction { 1.0 } else { 0.0 };
            let lhs = flux.global[k] + e;
            assert!((lhs - dir.mean_flux[k]).abs() < 1e-12, "{lhs} {}", dir.mean_flux[k]);
        }
    }
    let empty = PointSample::from_centers(torus(2, 16.0), ProcessSpec::Poisson { lambda: 1e-3 }, 0, &[]).unwrap();
    let f0 = GridField::rasterize(&empty, p, 64).unwrap();
    let sol0 = solve_all(&f0, &SolverConfig::default()).unwrap();
    let flux0 = inclusion_flux_average(&f0, &sol0.directions[0], &empty, &cluster_decomposition(&empty)).unwrap();
    assert_eq!(flux0.global, vec![0.0, 0.0]);
}

#[test]
fn well_separated_inclusion_carries_single_inclusion_flux() {
    let (alpha, beta) = (1.0, 2.0);
    let p = PhaseModel::isotropic(alpha, beta, 2).unwrap();
    let t = torus(2, 64.0);
    let s = PointSample::from_centers(t, ProcessSpec::Poisson { lambda: 1e-3 }, 0, &[vec![16.0, 16.0], vec![48.0, 40.0]]).unwrap();
    assert!(rho_separations(&s).iter().all(|&r| r >= 8.0));
    let f = GridField::rasterize(&s, p, 512).unwrap();
    let sol = solve_all(&f, &SolverConfig::default()).unwrap();
    let clusters = cluster_decomposition(&s);
    let expect = hat_a2_isotropic_scalar(alpha, beta, 2).unwrap();
    for dir in &sol.directions {
        let flux = inclusion_flux_average(&f, dir, &s, &clusters).unwrap();
        for q in 0..clusters.len() {
            let v = flux.normalized(q, f.cells());
            assert!((v[dir.direction] / expect - 1.0).abs() < 0.05, "{v:?}");
            assert!(v[1 - dir.direction].abs() < 0.05 * expect);
        }
    }
}

#[test]
fn reference_medium_does_not_change_the_answer() {
    let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
    let f = poisson_field(0.05, 4, p, 64);
    let tol = 1e-8;
    let mk = |a0: f64| SolverConfig {
        alpha0: Some(a0),
        ..SolverConfig::fixed_point().with_tol(tol)
    };
    let a = effective_tensor(&f, &mk(1.5)).unwrap().abar;
    let b = effective_tensor(&f, &mk(2.5)).unwrap().abar;
    assert!((a - b).max_abs() < 10.0 * tol, "{}", (a - b).max_abs());
    let c = effective_tensor(&f, &SolverConfig::default().with_tol(tol)).unwrap().abar;
    assert!((a - c).max_abs() < 10.0 * tol);
}

#[test]
fn conjugate_residual_handles_contrast_ten_thousand() {
    let p = PhaseModel::isotropic(1.0, 1e4, 2).unwrap();
    let f = poisson_field(0.03, 1, p, 128);
    let sol = solve_corrector(&f, 0, &SolverConfig::default()).unwrap();
    assert!(sol.final_residual <= 1e-8);
    assert!(sol.iterations < 2000);
}

#[test]
fn gradient_dump_round_trips() {
    let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
    let f = poisson_field(0.03, 7, p, 64);
    let sol = solve_corrector(&f, 1, &SolverConfig::default()).unwrap();
    let mut buf = Vec::new();
    f.write_vector_field(&mut buf, &sol.gradient).unwrap();
    let (t, n, phases, g) = GridField::<f64>::read_vector_field(&buf[..]).unwrap();
    assert_eq!((t, n, phases), (f.torus, 64, p));
    assert_eq!(g, sol.gradient);
}

#[test]
fn solve_record_has_the_documented_keys() {
    let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
    let f = poisson_field(0.03, 7, p, 64);
    let rec = effective_tensor(&f, &SolverConfig::default()).unwrap().record();
    let v = serde_json::to_value(&rec).unwrap();
    for key in ["iterations", "final_residual", "alpha0", "scheme", "Abar"] {
        assert!(v.get(key).is_some(), "{key}");
    }
    assert_eq!(v["Abar"].as_array().unwrap().len(), 4);
    assert_eq!(v["scheme"], "conjugate_gradient");
}

#[test]
fn thread_count_does_not_change_results() {
    let p = PhaseModel::isotropic(1.0, 5.0, 3).unwrap();
    let s = sample_poisson(0.02, &torus(3, 16.0), 3).unwrap();
    let f = GridField::rasterize(&s, p, 64).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| effective_tensor(&f, &SolverConfig::default()).unwrap().abar)
    };
    let one = run(1);
    let two = run(2);
    let four = run(4);
    assert_eq!(one, run(1));
    assert!((one - two).max_abs() <= 1e-12);
    assert!((one - four).max_abs() <= 1e-12);
}

fn equivariance_case() -> impl Strategy<Value = (usize, u64, Vec<usize>, Vec<bool>)> {
    (2usize..=3, any::<u64>()).prop_flat_map(|(d, seed)| {
        (
            Just(d),
            Just(seed),
            Just((0..d).collect::<Vec<_>>()).prop_shuffle(),
            prop::collection::vec(any::<bool>(), d),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn effective_tensor_is_equivariant_under_grid_symmetries((d, seed, perm, flips) in equivariance_case()) {
        let a2 = if d == 2 {
            Tensor::from_rows(&[vec![3.0, 0.5], vec![0.5, 2.0]]).unwrap()
        } else {
            Tensor::from_rows(&[vec![3.0, 0.5, 0.0], vec![0.5, 2.0, 0.3], vec![0.0, 0.3, 4.0]]).unwrap()
        };
        let p = PhaseModel::new(Tensor::identity(d), a2).unwrap();
        let f = poisson_field(0.03, seed, p, 64);
        let g = f.transformed(&perm, &flips).unwrap();
        let signs: Vec<f64> = flips.iter().map(|&b| if b { -1.0 } else { 1.0 }).collect();
        let cfg = SolverConfig::default().with_tol(1e-10);
        let a = effective_tensor(&f, &cfg).unwrap().abar;
        let b = effective_tensor(&g, &cfg).unwrap().abar;
        let expect = a.conjugate_signed_permutation(&perm, &signs);
        prop_assert!((b - expect).max_abs() < 1e-8, "{} vs {}", b, expect);
    }

    #[test]
    fn voigt_reuss_bounds_hold(seed in any::<u64>(), beta in 0.05f64..20.0, lambda in 0.01f64..0.08) {
        let p = PhaseModel::isotropic(1.0, beta, 2).unwrap();
        let f = poisson_field(lambda, seed, p, 64);
        let phi = f.volume_fraction();
        let a = effective_tensor(&f, &SolverConfig::default().with_tol(1e-10)).unwrap().abar;
        let arith = (1.0 - phi) + phi * beta;
        let harm = 1.0 / ((1.0 - phi) + phi / beta);
        for ev in a.symmetric_eigenvalues() {
            prop_assert!(ev >= harm * (1.0 - 1e-9) && ev <= arith * (1.0 + 1e-9), "{ev} not in [{harm}, {arith}]");
        }
    }

    #[test]
    fn residual_history_is_monotone_and_mean_is_fixed(seed in any::<u64>(), beta in 2.0f64..200.0) {
        let p = PhaseModel::isotropic(1.0, beta, 2).unwrap();
        let f = poisson_field(0.05, seed, p, 64);
        for k in 0..2 {
            let sol = solve_corrector(&f, k, &SolverConfig::default().with_tol(1e-10)).unwrap();
            for w in sol.residual_history.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{:?}", sol.residual_history);
            }
            let m = mean_gradient(&sol.gradient);
            for (j, v) in m.iter().enumerate() {
                let e = if j == k { 1.0 } else { 0.0 };
                prop_assert!((v - e).abs() < 1e-12);
            }
        }
    }
}
