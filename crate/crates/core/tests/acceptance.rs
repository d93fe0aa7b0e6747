//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on failure.

use std::time::Instant;

use dilute_homog::corrector::*;
use dilute_homog::experiment::*;
use dilute_homog::microstructure::*;
use dilute_homog::point_process::*;
use dilute_homog::single_inclusion::*;
use dilute_homog::Tensor;
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: String) -> Outcome {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn closed_form_identities() -> Outcome {
    // Floating point: the dipole form (β - α)(1 + K) cancels in 1 + K, so the
    // 1e-13 comparison is run at contrasts up to 100.
    let mut worst = 0.0f64;
    let grid: Vec<f64> = (0..10).map(|i| 10f64.powf(-1.0 + 2.0 * i as f64 / 9.0)).collect();
    for (i, &alpha) in grid.iter().enumerate() {
        for (j, &beta) in grid.iter().enumerate() {
            let d = 1 + (i + j) % 3;
            let df = d as f64;
            let closed = alpha * df * (beta - alpha) / (beta + alpha * (df - 1.0));
            let k = dipole_k(alpha, beta, d).map_err(|e| e.to_string())?;
            worst = worst.max(rel((beta - alpha) * (1.0 + k), closed));
            let hat = hat_a2_isotropic(alpha, beta, d).map_err(|e| e.to_string())?;
            worst = worst.max(rel(hat.get(0, 0), closed));
            let p = PhaseModel::isotropic(alpha, beta, d).map_err(|e| e.to_string())?;
            let cm = cm_prediction(&p, 0.01).map_err(|e| e.to_string())?;
            worst = worst.max(rel(cm.get(0, 0), alpha + 0.01 * closed));
            if i == j && (k != 0.0 || hat.max_abs() != 0.0 || cm != *p.a1()) {
                return Err(format!("zero-contrast collapse fails at alpha = {alpha}, d = {d}"));
            }
        }
    }
    // Exact rationals over contrasts up to 10^6.
    let r = |n: i128, m: i128| Ratio::<i128>::new(n, m);
    let exact_grid = [r(1, 100), r(1, 10), r(1, 2), r(1, 1), r(2, 1), r(7, 1), r(30, 1), r(100, 1), r(1000, 1), r(10000, 1)];
    let mut exact_points = 0;
    for (i, &alpha) in exact_grid.iter().enumerate() {
        for (j, &beta) in exact_grid.iter().enumerate() {
            let d = 1 + (i + j) % 3;
            let df = Ratio::from_integer(d as i128);
            let k = dipole_k(alpha, beta, d).map_err(|e| e.to_string())?;
            let closed = alpha * df * (beta - alpha) / (beta + alpha * (df - Ratio::from_integer(1)));
            let hat = hat_a2_isotropic_scalar(alpha, beta, d).map_err(|e| e.to_string())?;
            if (beta - alpha) * (Ratio::from_integer(1) + k) != closed || hat != closed {
                return Err(format!("exact identity fails at alpha = {alpha}, beta = {beta}, d = {d}"));
            }
            exact_points += 1;
        }
    }
    check(
        worst <= 1e-13,
        format!("100 float (alpha, beta, d) points, worst relative deviation {worst:.2e}; {exact_points} rational points exact"),
    )
}

fn interface_physics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let d = 2 + i % 2;
        let n = unit(&mut rng, d);
        let e = unit(&mut rng, d);
        let alpha = rng.random_range(0.1..10.0);
        let beta = rng.random_range(0.1..10.0);
        let out: Vec<f64> = n.iter().map(|v| v * (1.0 + 1e-15)).collect();
        let inn: Vec<f64> = n.iter().map(|v| v * (1.0 - 1e-15)).collect();
        let go: Vec<f64> = psi_gradient(&out, &e, alpha, beta).unwrap().iter().zip(&e).map(|(a, b)| a + b).collect();
        let gi: Vec<f64> = psi_gradient(&inn, &e, alpha, beta).unwrap().iter().zip(&e).map(|(a, b)| a + b).collect();
        let (fo, fi) = (alpha * dot(&go, &n), beta * dot(&gi, &n));
        let scale = fo.abs().max(fi.abs()).max(1e-3 * alpha.max(beta));
        worst = worst.max((fo - fi).abs() / scale);
        let (gon, gin) = (dot(&go, &n), dot(&gi, &n));
        let tscale = gi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
        for k in 0..d {
            worst = worst.max(((go[k] - gon * n[k]) - (gi[k] - gin * n[k])).abs() / tscale);
        }
    }
    let div = |x: &[f64], e: &[f64], h: f64| -> f64 {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (psi_gradient(&p, e, 1.0, 3.0).unwrap()[i] - psi_gradient(&m, e, 1.0, 3.0).unwrap()[i]) / (2.0 * h)
            })
            .sum()
    };
    let mut orders = Vec::new();
    for i in 0..40 {
        let d = 2 + i % 2;
        let n = unit(&mut rng, d);
        let e = unit(&mut rng, d);
        let x: Vec<f64> = n.iter().map(|v| v * rng.random_range(1.5..3.0)).collect();
        let (a, b) = (div(&x, &e, 0.04), div(&x, &e, 0.02));
        let c = div(&x, &e, 0.01);
        if a.abs() > 1e-9 && b.abs() > 1e-9 {
            orders.push(((a / b).log2() + (b / c).log2()) / 2.0);
        }
    }
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let max_order = orders.iter().copied().fold(0.0, f64::max);
    check(
        worst <= 1e-12 && min_order > 1.8 && max_order < 2.2,
        format!(
            "continuity worst {worst:.2e} on 1000 sphere points; divergence order in [{min_order:.3}, {max_order:.3}]"
        ),
    )
}

fn solver_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for (d, n, beta) in [(2, 512, 4.0), (2, 512, 100.0), (3, 64, 4.0), (3, 64, 100.0)] {
        let t = TorusSpec::new(d, 16.0).unwrap();
        let p = PhaseModel::isotropic(1.0, beta, d).unwrap();
        let f = GridField::laminate(t, n, p, 0, n / 8, n / 16).map_err(|e| e.to_string())?;
        let harmonic = 2.0 * beta / (1.0 + beta);
        let arithmetic = (1.0 + beta) / 2.0;
        for cfg in [SolverConfig::default().with_tol(1e-12), SolverConfig::fixed_point().with_tol(1e-12)] {
            let a = effective_tensor(&f, &cfg).map_err(|e| e.to_string())?.abar;
            worst = worst.max(rel(a.get(0, 0), harmonic));
            for k in 1..d {
                worst = worst.max(rel(a.get(k, k), arithmetic));
            }
        }
    }
    check(worst <= 1e-10, format!("laminates d = 2 (N = 512), d = 3 (N = 64), contrast 4 and 100: worst relative error {worst:.2e}"))
}

fn single_inclusion_consistency() -> Outcome {
    let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
    let cfg = HatA2Config {
        sides: Some(vec![16.0, 32.0, 64.0]),
        cells_per_unit: 16,
        ..HatA2Config::default()
    };
    let est = hat_a2_numeric(&p, &cfg).map_err(|e| e.to_string())?;
    let exact = hat_a2_isotropic(1.0, 2.0, 2).unwrap();
    let err = (est.value - exact).operator_norm() / exact.operator_norm();
    let per: Vec<String> = est.per_side.iter().map(|(l, v)| format!("L={l}: {:.6}", v.get(0, 0))).collect();
    check(
        err < 0.01,
        format!("extrapolated {:.6} vs 2/3, relative error {:.3}% ({}, N up to 1024)", est.value.get(0, 0), 100.0 * err, per.join(", ")),
    )
}

fn dilute_law() -> Outcome {
    let cfg: SweepConfig<f64> = serde_json::from_value(serde_json::json!({
        "d": 2,
        "process": {"kind": "poisson"},
        "intensities": [0.001, 0.002, 0.004],
        "levels": [{"L": 128.0, "N": 512}, {"L": 128.0, "N": 1024}],
        "ensemble_size": 24,
        "phases": {"A1": [[1.0, 0.0], [0.0, 1.0]], "A2": [[2.0, 0.0], [0.0, 2.0]]},
        "seed_base": 1
    }))
    .unwrap();
    let rep = run_sweep(&cfg, &SweepOptions::default()).map_err(|e| e.to_string())?;
    let rows = limit_rows(&rep);
    let ratios: Vec<f64> = rows.iter().map(|r| r.eps_over_phi()).collect();
    // ε/φ̂ shrinks as the intensity is lowered.
    let monotone = ratios.windows(2).all(|w| w[0] < w[1]);
    let noise_ok = rows.iter().all(|r| r.above_noise);
    let consts: Vec<f64> = rows.iter().map(|r| r.eps / lambda2_log(r.lambda2().unwrap())).collect();
    let spread = consts.iter().copied().fold(0.0, f64::max) / consts.iter().copied().fold(f64::INFINITY, f64::min);
    let summary: Vec<String> = rows
        .iter()
        .map(|r| format!("lambda={} eps={:.3e}±{:.1e} eps/phi={:.3e}", r.lambda, r.eps, r.eps_se, r.eps_over_phi()))
        .collect();
    match rep.fit {
        ScalingFit::Fit { slope, phi_exponent, constant, r2, .. } => check(
            monotone && noise_ok && phi_exponent >= 1.5 && (0.8..=1.3).contains(&slope) && spread < 3.0,
            format!(
                "{}; phi exponent {phi_exponent:.3}, slope {slope:.3} (C = {constant:.3}, R2 = {r2:.4}), constant spread x{spread:.2}, M = 24, {:.0} s",
                summary.join("; "),
                rep.elapsed_seconds
            ),
        ),
        ScalingFit::Inconclusive { reason, .. } => Err(format!("fit inconclusive: {reason}; {}", summary.join("; "))),
    }
}

fn geometry_equivalence() -> Outcome {
    let mut samples = 0;
    let mut centers = 0;
    for d in 2..=3 {
        let t = TorusSpec::new(d, if d == 2 { 64.0 } else { 24.0 }).unwrap();
        let mut corpus = Vec::new();
        for (k, lambda) in [0.001, 0.005, 0.02, 0.06].iter().enumerate() {
            for seed in 0..30 {
                corpus.push(sample_poisson(*lambda, &t, (k * 100 + seed) as u64).unwrap());
            }
        }
        for seed in 0..30 {
            corpus.push(sample_matern2(0.02, 4.0, &t, seed).unwrap());
            corpus.push(sample_matern2(0.05, 2.5, &t, seed).unwrap());
            corpus.push(sample_jittered_lattice(4.0, 0.9, &t, seed).unwrap());
            corpus.push(sample_jittered_lattice(8.0, 2.0, &t, seed).unwrap());
        }
        for s in &corpus {
            let c = cluster_decomposition(s);
            let rho = rho_separations(s);
            for n in 0..s.len() {
                if c.is_singleton(n) != is_well_separated(rho[n]) {
                    return Err(format!("mismatch in {:?} seed {} center {n}", s.process, s.seed));
                }
            }
            samples += 1;
            centers += s.len();
        }
    }
    check(true, format!("{samples} samples, {centers} centers, no mismatch"))
}

fn lambda2_estimator() -> Outcome {
    let cfg = Lambda2Config::default();
    let mut lines = Vec::new();
    let mut ok = true;
    // The bin maximum is biased upward by about 3.5/sqrt(pairs per bin), so
    // each ensemble is sized for several hundred pairs per bin.
    for (d, side, lambda, m) in [(2, 128.0, 0.01, 800), (2, 128.0, 0.02, 200), (2, 128.0, 0.05, 200), (3, 32.0, 0.02, 200)] {
        let t = TorusSpec::new(d, side).unwrap();
        let ens: Vec<_> = (0..m).map(|s| sample_poisson(lambda, &t, s).unwrap()).collect();
        let est = estimate_lambda2(&ens, cfg.bin_side(None), &cfg).map_err(|e| e.to_string())?;
        let ratio = est.lambda2 / (lambda * lambda);
        let lo = est.lambda * est.lambda * (1.0 - est.rel_err_3sigma);
        let hi = est.lambda * (1.0 + est.rel_err_3sigma);
        ok &= (0.8..=1.2).contains(&ratio) && est.lambda2 >= lo && est.lambda2 <= hi;
        lines.push(format!("d={d} lambda={lambda} M={m}: ratio {ratio:.3}"));
    }
    for (spacing, jitter) in [(8.0, 1.0), (4.0, 0.5)] {
        let t = TorusSpec::new(2, 64.0).unwrap();
        let spec = ProcessSpec::JitteredLattice { spacing, jitter };
        let ens: Vec<_> = (0..100).map(|s| spec.sample(&t, s).unwrap()).collect();
        let est = estimate_lambda2(&ens, cfg.bin_side(analytic_contact_scale(&spec)), &cfg).map_err(|e| e.to_string())?;
        let lo = est.lambda * est.lambda * (1.0 - est.rel_err_3sigma);
        let hi = est.lambda * (1.0 + est.rel_err_3sigma);
        ok &= est.lambda2 >= lo && est.lambda2 <= hi;
        lines.push(format!("lattice a={spacing}: lambda2/lambda = {:.3}", est.lambda2 / est.lambda));
    }
    check(ok, lines.join(", "))
}

fn invariant_suite() -> Outcome {
    let mut fixtures = Vec::new();
    for (d, beta, lambda, seed) in [(2, 2.0, 0.04, 1u64), (2, 20.0, 0.08, 2), (3, 5.0, 0.03, 3)] {
        let t = TorusSpec::new(d, 16.0).unwrap();
        let s = sample_poisson(lambda, &t, seed).unwrap();
        fixtures.push(GridField::rasterize(&s, PhaseModel::isotropic(1.0, beta, d).unwrap(), 64).unwrap());
    }
    let aniso = PhaseModel::new(
        Tensor::identity(2),
        Tensor::from_rows(&[vec![3.0, 0.7], vec![0.7, 2.0]]).unwrap(),
    )
    .unwrap();
    let s = sample_poisson(0.05, &TorusSpec::new(2, 16.0).unwrap(), 4).unwrap();
    fixtures.push(GridField::rasterize(&s, aniso, 64).unwrap());
    fixtures.push(
        GridField::laminate(TorusSpec::new(2, 16.0).unwrap(), 64, PhaseModel::isotropic(1.0, 10.0, 2).unwrap(), 1, 16, 5)
            .unwrap(),
    );

    let tol = 1e-10;
    let cfg = SolverConfig::default().with_tol(tol);
    let mut worst_equiv = 0.0f64;
    let mut worst_ref = 0.0f64;
    let mut worst_threads = 0.0f64;
    let mut bounds_ok = true;
    for f in &fixtures {
        let d = f.dim();
        let a = effective_tensor(f, &cfg).map_err(|e| e.to_string())?.abar;
        if let Some((alpha, beta)) = f.phases.isotropic_scalars() {
            let phi = f.volume_fraction();
            let arith = (1.0 - phi) * alpha + phi * beta;
            let harm = 1.0 / ((1.0 - phi) / alpha + phi / beta);
            bounds_ok &= a
                .symmetric_eigenvalues()
                .iter()
                .all(|&ev| ev >= harm * (1.0 - 1e-9) && ev <= arith * (1.0 + 1e-9));
        }
        let perm: Vec<usize> = (0..d).rev().collect();
        let flips: Vec<bool> = (0..d).map(|k| k % 2 == 0).collect();
        let signs: Vec<f64> = flips.iter().map(|&b| if b { -1.0 } else { 1.0 }).collect();
        let g = f.transformed(&perm, &flips).map_err(|e| e.to_string())?;
        let b = effective_tensor(&g, &cfg).map_err(|e| e.to_string())?.abar;
        worst_equiv = worst_equiv.max((b - a.conjugate_signed_permutation(&perm, &signs)).max_abs());
        let (lo, hi) = f.phases.eigen_range();
        for a0 in [0.6 * hi, lo + hi] {
            let fp = SolverConfig {
                alpha0: Some(a0),
                ..SolverConfig::fixed_point().with_tol(tol)
            };
            let c = effective_tensor(f, &fp).map_err(|e| e.to_string())?.abar;
            worst_ref = worst_ref.max((c - a).max_abs());
        }
        for threads in [1, 2, 3] {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let c = pool.install(|| effective_tensor(f, &cfg)).map_err(|e| e.to_string())?.abar;
            worst_threads = worst_threads.max((c - a).max_abs());
        }
    }
    check(
        bounds_ok && worst_equiv < 1e-8 && worst_ref < 10.0 * tol && worst_threads <= 1e-12,
        format!(
            "{} fixtures: bounds {}, equivariance {worst_equiv:.1e}, reference medium {worst_ref:.1e}, worker counts {worst_threads:.1e}",
            fixtures.len(),
            if bounds_ok { "hold" } else { "violated" }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("closed-form identities", closed_form_identities),
        ("interface physics", interface_physics),
        ("solver laminate oracle", solver_oracle),
        ("single-inclusion consistency", single_inclusion_consistency),
        ("dilute law scaling", dilute_law),
        ("geometry equivalence", geometry_equivalence),
        ("lambda2 estimator", lambda2_estimator),
        ("invariant suite", invariant_suite),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("criterion {} PASS {name} [{secs:.1} s]: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("criterion {} FAIL {name} [{secs:.1} s]: {msg}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
