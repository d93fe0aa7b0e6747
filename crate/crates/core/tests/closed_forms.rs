use dilute_homog::single_inclusion::*;
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn unit_vector(raw: &[f64]) -> Vec<f64> {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    raw.iter().map(|v| v / n).collect()
}

fn direction(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_filter("non-degenerate", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-4)
        .prop_map(|v| unit_vector(&v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #[test]
    fn amplitude_identity(alpha in 0.01f64..100.0, beta in 0.01f64..100.0, d in 1usize..=3) {
        let k = dipole_k(alpha, beta, d).unwrap();
        let lhs = (beta - alpha) * (1.0 + k);
        let df = d as f64;
        let rhs = alpha * df * (beta - alpha) / (beta + alpha * (df - 1.0));
        prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.abs().max(1e-300));
        prop_assert!(rel(clausius_mossotti_amplitude(alpha, beta, d).unwrap(), rhs) < 1e-13 || rhs == 0.0);
    }

    #[test]
    fn zero_contrast_collapses(alpha in 0.01f64..100.0, d in 1usize..=3) {
        prop_assert_eq!(dipole_k(alpha, alpha, d).unwrap(), 0.0);
        prop_assert_eq!(hat_a2_isotropic_scalar(alpha, alpha, d).unwrap(), 0.0);
        let p = PhaseModel::isotropic(alpha, alpha, d).unwrap();
        prop_assert_eq!(cm_prediction(&p, 0.3).unwrap(), *p.a1());
    }

    #[test]
    fn interior_gradient_is_constant(
        e in direction(3), x in prop::collection::vec(-0.57f64..0.57, 3), beta in 0.1f64..10.0,
    ) {
        let k = dipole_k(1.0, beta, 3).unwrap();
        let g = psi_gradient(&x, &e, 1.0, beta).unwrap();
        for i in 0..3 {
            prop_assert_eq!(g[i], k * e[i]);
        }
    }

    #[test]
    fn exterior_gradient_decays(
        d in 2usize..=3, raw in prop::collection::vec(-1.0f64..1.0, 3), r in 1.0001f64..20.0,
        beta in 0.1f64..10.0,
    ) {
        let n = unit_vector(&raw[..d]);
        let x: Vec<f64> = n.iter().map(|v| v * r).collect();
        let e = {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        };
        let k = dipole_k(1.0, beta, d).unwrap();
        let g = psi_gradient(&x, &e, 1.0, beta).unwrap();
        let norm = dot(&g, &g).sqrt();
        prop_assert!(norm <= k.abs() * d as f64 * r.powi(-(d as i32)) * (1.0 + 1e-12));
    }
}

/// `∇ψ + e` just outside and just inside the unit sphere at normal `n`.
fn outer_and_inner(n: &[f64], e: &[f64], alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let out: Vec<f64> = n.iter().map(|v| v * (1.0 + 1e-15)).collect();
    let inn: Vec<f64> = n.iter().map(|v| v * (1.0 - 1e-15)).collect();
    let go = psi_gradient(&out, e, alpha, beta).unwrap();
    let gi = psi_gradient(&inn, e, alpha, beta).unwrap();
    (
        go.iter().zip(e).map(|(a, b)| a + b).collect(),
        gi.iter().zip(e).map(|(a, b)| a + b).collect(),
    )
}

#[test]
fn interface_continuity_on_the_sphere() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for d in 2..=3 {
        for _ in 0..1000 {
            let raw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = unit_vector(&raw);
            let e = unit_vector(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let alpha = rng.random_range(0.1..10.0);
            let beta = rng.random_range(0.1..10.0);
            let (go, gi) = outer_and_inner(&n, &e, alpha, beta);
            let flux_out = alpha * dot(&go, &n);
            let flux_in = beta * dot(&gi, &n);
            let scale = flux_out.abs().max(flux_in.abs()).max(alpha.max(beta) * 1e-3);
            assert!((flux_out - flux_in).abs() <= 1e-12 * scale, "d={d} {flux_out} {flux_in}");
            let tangential = |g: &[f64]| -> Vec<f64> {
                let gn = dot(g, &n);
                g.iter().zip(&n).map(|(a, b)| a - gn * b).collect()
            };
            let (to, ti) = (tangential(&go), tangential(&gi));
            let tscale = dot(&ti, &ti).sqrt().max(1e-3);
            for (a, b) in to.iter().zip(&ti) {
                assert!((a - b).abs() <= 1e-12 * tscale);
            }
        }
    }
}

fn fd_divergence(x: &[f64], e: &[f64], beta: f64, h: f64) -> f64 {
    let d = x.len();
    (0..d)
        .map(|i| {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            (psi_gradient(&p, e, 1.0, beta).unwrap()[i] - psi_gradient(&m, e, 1.0, beta).unwrap()[i]) / (2.0 * h)
        })
        .sum()
}

#[test]
fn exterior_divergence_vanishes_at_second_order() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    for d in 2..=3 {
        for _ in 0..50 {
            let n = unit_vector(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let r = rng.random_range(1.5..3.0);
            let x: Vec<f64> = n.iter().map(|v| v * r).collect();
            let e = unit_vector(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let coarse = fd_divergence(&x, &e, 4.0, 0.02);
            let fine = fd_divergence(&x, &e, 4.0, 0.01);
            assert!(fine.abs() < 1e-3);
            if coarse.abs() > 1e-9 {
                let ratio = coarse / fine;
                assert!((3.5..4.5).contains(&ratio), "d={d} ratio {ratio}");
            }
        }
    }
}

#[test]
fn perfectly_conducting_limit() {
    let a = clausius_mossotti_amplitude(1.0f64, 1e6, 3).unwrap();
    assert!((a - 3.0).abs() < 1e-5);
    let a2 = clausius_mossotti_amplitude(1.0f64, 1e6, 2).unwrap();
    assert!((a2 - 2.0).abs() < 1e-5);
}
