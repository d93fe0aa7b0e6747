//! Periodic corrector problem and effective tensor on a rasterized field.
//!
//! For a unit direction `e` the unknown is `g = e + u`, where `u` is a
//! zero-mean discrete gradient. Equilibrium means the flux `A g` has no
//! component along discrete gradients: `P(A g) = 0`. The residual reported
//! at every iteration is `‖P(A g)‖ / |⟨A e⟩|` with `‖·‖` the RMS over cells.
//!
//! * `fixed_point`: `u ← u - P(A g) / α₀`, contracting for
//!   `α₀ > λ_max / 2` (symmetric phases).
//! * `conjugate_gradient`: conjugate residuals for `P A u = -P A e` on the
//!   gradient subspace; the operator is self-adjoint there for symmetric
//!   phases and the residual norm is non-increasing.

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::microstructure::raster::for_each_cell_in_ball;
use crate::microstructure::{Clusters, GridField};
use crate::point_process::PointSample;
use crate::scalar::{of_usize, Real};
use crate::single_inclusion::PhaseModel;
use crate::spectral::{ordered_sum, GreenProjector, CHUNK};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FixedPoint,
    ConjugateGradient,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::FixedPoint => "fixed_point",
            Scheme::ConjugateGradient => "conjugate_gradient",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct SolverConfig<T> {
    pub scheme: Scheme,
    /// Reference conductivity; `None` picks the scheme default.
    pub alpha0: Option<T>,
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            scheme: Scheme::ConjugateGradient,
            alpha0: None,
            tol: T::lit(1e-8),
            max_iter: 2000,
        }
    }
}

impl<T: Real> SolverConfig<T> {
    pub fn fixed_point() -> Self {
        Self {
            scheme: Scheme::FixedPoint,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > T::zero() && self.tol < T::lit(1e-2)) {
            return Err(Error::config("tol", format!("must lie in (0, 1e-2), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::config("max_iter", "must be positive"));
        }
        if let Some(a) = self.alpha0 {
            if !(a > T::zero()) || !Float::is_finite(a) {
                return Err(Error::config("alpha0", format!("must be positive, got {a}")));
            }
        }
        Ok(())
    }

    /// Validated reference conductivity for `phases`.
    pub fn resolve_alpha0(&self, phases: &PhaseModel<T>) -> Result<T> {
        self.validate()?;
        let (lo, hi) = phases.eigen_range();
        let symmetric = phases.is_symmetric();
        match self.scheme {
            Scheme::ConjugateGradient => {
                if !symmetric {
                    return Err(Error::config(
                        "scheme",
                        "conjugate_gradient needs symmetric phases; use fixed_point",
                    ));
                }
                Ok(self
                    .alpha0
                    .unwrap_or_else(|| phases.a1().trace() / of_usize::<T>(phases.dim())))
            }
            Scheme::FixedPoint => {
                let sigma = phases.max_operator_norm();
                // Contraction of I - A/α₀ needs α₀ > λ_max/2 (symmetric) or
                // α₀ > σ_max² / (2 s_min) in general.
                let bound = if symmetric {
                    hi / T::lit(2.0)
                } else {
                    sigma * sigma / (T::lit(2.0) * lo)
                };
                let default = if symmetric {
                    (lo + hi) / T::lit(2.0)
                } else {
                    sigma * sigma / lo
                };
                let a = self.alpha0.unwrap_or(default);
                if !(a > bound) {
                    return Err(Error::config(
                        "alpha0",
                        format!("fixed_point needs alpha0 > {bound} for these phases, got {a}"),
                    ));
                }
                Ok(a)
            }
        }
    }
}

/// Converged corrector gradient for one direction.
#[derive(Clone, Debug)]
pub struct DirectionSolution<T> {
    pub direction: usize,
    /// `g = e + ∇φ`, one vector per component.
    pub gradient: Vec<Vec<T>>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub final_residual: f64,
    pub restarts: usize,
    /// `⟨A g⟩`.
    pub mean_flux: Vec<T>,
}

/// Effective tensor with per-direction diagnostics.
#[derive(Clone, Debug)]
pub struct CorrectorSolution<T: Real> {
    pub directions: Vec<DirectionSolution<T>>,
    /// Column `k` is `⟨A g_k⟩`; symmetrized when both phases are symmetric.
    pub abar: Tensor<T>,
    /// Unsymmetrized `⟨A g_k⟩` columns.
    pub abar_raw: Tensor<T>,
    /// `‖Ā_raw - Ā_rawᵀ‖_F / ‖Ā_raw‖_F`.
    pub asymmetry: T,
    pub scheme: Scheme,
    pub alpha0: T,
}

/// Per-solve diagnostic record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub iterations: usize,
    pub final_residual: f64,
    pub alpha0: f64,
    pub scheme: Scheme,
    #[serde(rename = "Abar")]
    pub abar: Vec<f64>,
    pub asymmetry: f64,
    pub directions: Vec<DirectionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionRecord {
    pub direction: usize,
    pub iterations: usize,
    pub final_residual: f64,
    pub restarts: usize,
    pub residual_history: Vec<f64>,
}

impl<T: Real> CorrectorSolution<T> {
    pub fn record(&self) -> SolveRecord {
        SolveRecord {
            iterations: self.directions.iter().map(|s| s.iterations).sum(),
            final_residual: self
                .directions
                .iter()
                .map(|s| s.final_residual)
                .fold(0.0, f64::max),
            alpha0: self.alpha0.to_f64_lossy(),
            scheme: self.scheme,
            abar: self.abar.to_row_major().iter().map(|v| v.to_f64_lossy()).collect(),
            asymmetry: self.asymmetry.to_f64_lossy(),
            directions: self
                .directions
                .iter()
                .map(|s| DirectionRecord {
                    direction: s.direction,
                    iterations: s.iterations,
                    final_residual: s.final_residual,
                    restarts: s.restarts,
                    residual_history: s.residual_history.clone(),
                })
                .collect(),
        }
    }
}

type VecField<T> = Vec<Vec<T>>;

fn zeros<T: Real>(d: usize, cells: usize) -> VecField<T> {
    vec![vec![T::zero(); cells]; d]
}

fn dot<T: Real>(a: &[Vec<T>], b: &[Vec<T>]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| ordered_sum(x.len(), |i| x[i] * y[i]))
        .fold(T::zero(), |s, v| s + v)
}

/// `y ← y + a x`.
fn axpy<T: Real>(a: T, x: &[Vec<T>], y: &mut [Vec<T>]) {
    for (xc, yc) in x.iter().zip(y.iter_mut()) {
        yc.par_chunks_mut(CHUNK)
            .zip(xc.par_chunks(CHUNK))
            .for_each(|(yy, xx)| {
                for (u, &v) in yy.iter_mut().zip(xx) {
                    *u = *u + a * v;
                }
            });
    }
}

/// `y ← x + b y`.
fn xpby<T: Real>(x: &[Vec<T>], b: T, y: &mut [Vec<T>]) {
    for (xc, yc) in x.iter().zip(y.iter_mut()) {
        yc.par_chunks_mut(CHUNK)
            .zip(xc.par_chunks(CHUNK))
            .for_each(|(yy, xx)| {
                for (u, &v) in yy.iter_mut().zip(xx) {
                    *u = v + b * *u;
                }
            });
    }
}

/// `out = e + u`.
fn shifted<T: Real>(e: &[T], u: &[Vec<T>], out: &mut [Vec<T>]) {
    for ((oc, uc), &ek) in out.iter_mut().zip(u).zip(e) {
        oc.par_chunks_mut(CHUNK)
            .zip(uc.par_chunks(CHUNK))
            .for_each(|(oo, uu)| {
                for (o, &v) in oo.iter_mut().zip(uu) {
                    *o = ek + v;
                }
            });
    }
}

fn negate<T: Real>(x: &mut [Vec<T>]) {
    for c in x.iter_mut() {
        c.par_chunks_mut(CHUNK).for_each(|cc| {
            for v in cc.iter_mut() {
                *v = -*v;
            }
        });
    }
}

/// Sum of `g` over the cells of each phase: `[phase][component]`.
fn phase_sums<T: Real>(field: &GridField<T>, g: &[Vec<T>]) -> [Vec<T>; 2] {
    let mask = field.mask();
    let per = |phase: u8| -> Vec<T> {
        g.iter()
            .map(|c| {
                ordered_sum(c.len(), |i| if mask[i] == phase { c[i] } else { T::zero() })
            })
            .collect()
    };
    [per(0), per(1)]
}

/// Cell average `⟨A g⟩`.
pub fn mean_flux<T: Real>(field: &GridField<T>, g: &[Vec<T>]) -> Vec<T> {
    let sums = phase_sums(field, g);
    let inv = T::one() / of_usize::<T>(field.cells());
    let f1 = field.phases.a1().mul_vec(&sums[0]);
    let f2 = field.phases.a2().mul_vec(&sums[1]);
    f1.iter().zip(&f2).map(|(&a, &b)| (a + b) * inv).collect()
}

/// Cell average `⟨g⟩`.
pub fn mean_gradient<T: Real>(g: &[Vec<T>]) -> Vec<T> {
    g.iter()
        .map(|c| ordered_sum(c.len(), |i| c[i]) / of_usize::<T>(c.len()))
        .collect()
}

fn rms<T: Real>(x: &[Vec<T>], cells: usize) -> T {
    Float::sqrt(dot(x, x) / of_usize::<T>(cells))
}

fn unit<T: Real>(d: usize, k: usize) -> Vec<T> {
    (0..d).map(|j| if j == k { T::one() } else { T::zero() }).collect()
}

/// Solves the corrector problem for the unit direction `e_k`.
pub fn solve_corrector<T: Real>(
    field: &GridField<T>,
    k: usize,
    cfg: &SolverConfig<T>,
) -> Result<DirectionSolution<T>> {
    let mut proj = GreenProjector::for_field(field);
    solve_with(field, k, cfg, &mut proj)
}

fn solve_with<T: Real>(
    field: &GridField<T>,
    k: usize,
    cfg: &SolverConfig<T>,
    proj: &mut GreenProjector<T>,
) -> Result<DirectionSolution<T>> {
    let d = field.dim();
    if k >= d {
        return Err(Error::config("direction", format!("must be < d = {d}, got {k}")));
    }
    let alpha0 = cfg.resolve_alpha0(&field.phases)?;
    let cells = field.cells();
    let e = unit::<T>(d, k);
    let phi = field.volume_fraction();
    let ae = field.phases.a1().mul_vec(&e).iter().zip(field.phases.a2().mul_vec(&e))
        .map(|(&a, b)| (T::one() - phi) * a + phi * b)
        .collect::<Vec<T>>();
    let flux_scale = Float::sqrt(ae.iter().fold(T::zero(), |s, &v| s + v * v));
    let rel = |r: T| (r / flux_scale).to_f64_lossy();
    let tol = cfg.tol.to_f64_lossy();

    let mut u = zeros::<T>(d, cells);
    let mut g = zeros::<T>(d, cells);
    let mut r = zeros::<T>(d, cells);
    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut restarts = 0usize;

    match cfg.scheme {
        Scheme::FixedPoint => {
            let step = -T::one() / alpha0;
            loop {
                shifted(&e, &u, &mut g);
                proj.apply(field, &g, &mut r);
                let res = rel(rms(&r, cells));
                history.push(res);
                if res <= tol {
                    break;
                }
                if iterations >= cfg.max_iter || !res.is_finite() {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: res,
                        history,
                    });
                }
                axpy(step, &r, &mut u);
                iterations += 1;
            }
        }
        Scheme::ConjugateGradient => {
            let mut p = zeros::<T>(d, cells);
            let mut ar = zeros::<T>(d, cells);
            let mut ap = zeros::<T>(d, cells);
            'outer: loop {
                // r = -P(A(e + u)), the residual of P A u = -P A e.
                shifted(&e, &u, &mut g);
                proj.apply(field, &g, &mut r);
                negate(&mut r);
                let res = rel(rms(&r, cells));
                history.push(res);
                if res <= tol {
                    break;
                }
                if iterations >= cfg.max_iter {
                    return Err(Error::NonConvergence {
                        iterations,
                        residual: res,
                        history,
                    });
                }
                proj.apply(field, &r, &mut ar);
                for (pc, rc) in p.iter_mut().zip(&r) {
                    pc.copy_from_slice(rc);
                }
                for (apc, arc) in ap.iter_mut().zip(&ar) {
                    apc.copy_from_slice(arc);
                }
                let mut r_ar = dot(&r, &ar);
                loop {
                    let ap_ap = dot(&ap, &ap);
                    if !(ap_ap > T::zero()) || !(r_ar > T::zero()) {
                        restarts += 1;
                        continue 'outer;
                    }
                    let a = r_ar / ap_ap;
                    axpy(a, &p, &mut u);
                    axpy(-a, &ap, &mut r);
                    iterations += 1;
                    let res = rel(rms(&r, cells));
                    if res <= tol || iterations >= cfg.max_iter || !res.is_finite() {
                        // Confirm with the true residual; drift triggers a restart.
                        restarts += 1;
                        if !res.is_finite() {
                            history.push(res);
                            return Err(Error::NonConvergence {
                                iterations,
                                residual: res,
                                history,
                            });
                        }
                        continue 'outer;
                    }
                    history.push(res);
                    proj.apply(field, &r, &mut ar);
                    let r_ar_new = dot(&r, &ar);
                    let beta = r_ar_new / r_ar;
                    r_ar = r_ar_new;
                    xpby(&r, beta, &mut p);
                    xpby(&ar, beta, &mut ap);
                }
            }
            // The loop above counts the confirming evaluation as a restart.
            restarts = restarts.saturating_sub(1);
        }
    }
    shifted(&e, &u, &mut g);
    let mean = mean_flux(field, &g);
    let final_residual = *history.last().expect("at least one residual");
    Ok(DirectionSolution {
        direction: k,
        gradient: g,
        iterations,
        residual_history: history,
        final_residual,
        restarts,
        mean_flux: mean,
    })
}

fn assemble<T: Real>(
    field: &GridField<T>,
    directions: Vec<DirectionSolution<T>>,
    cfg: &SolverConfig<T>,
) -> Result<CorrectorSolution<T>> {
    let cols: Vec<Vec<T>> = directions.iter().map(|s| s.mean_flux.clone()).collect();
    let raw = Tensor::from_columns(&cols);
    let fro = raw.frobenius_norm();
    let asymmetry = if fro > T::zero() {
        (raw - raw.transpose()).frobenius_norm() / fro
    } else {
        T::zero()
    };
    let abar = if field.phases.is_symmetric() {
        raw.symmetric_part()
    } else {
        raw
    };
    Ok(CorrectorSolution {
        directions,
        abar,
        abar_raw: raw,
        asymmetry,
        scheme: cfg.scheme,
        alpha0: cfg.resolve_alpha0(&field.phases)?,
    })
}

/// Solves all `d` directions and keeps the gradient fields.
pub fn solve_all<T: Real>(field: &GridField<T>, cfg: &SolverConfig<T>) -> Result<CorrectorSolution<T>> {
    let mut proj = GreenProjector::for_field(field);
    let dirs = (0..field.dim())
        .map(|k| solve_with(field, k, cfg, &mut proj))
        .collect::<Result<Vec<_>>>()?;
    assemble(field, dirs, cfg)
}

/// Effective tensor `Ā`; gradient fields are dropped after each direction.
pub fn effective_tensor<T: Real>(field: &GridField<T>, cfg: &SolverConfig<T>) -> Result<CorrectorSolution<T>> {
    let mut proj = GreenProjector::for_field(field);
    let mut dirs = Vec::with_capacity(field.dim());
    for k in 0..field.dim() {
        let mut s = solve_with(field, k, cfg, &mut proj)?;
        s.gradient = Vec::new();
        dirs.push(s);
    }
    assemble(field, dirs, cfg)
}

/// Inclusion flux `⟨(A - A₁) g⟩` split by cluster.
#[derive(Clone, Debug)]
pub struct InclusionFlux<T> {
    /// Domain-normalized contribution of each cluster: `(1/N^d) Σ_cells (A₂ - A₁) g`.
    pub per_cluster: Vec<Vec<T>>,
    /// Inclusion cells attributed to each cluster.
    pub cells_per_cluster: Vec<usize>,
    /// Sum over clusters, equal to `Ā e - A₁ e`.
    pub global: Vec<T>,
}

impl<T: Real> InclusionFlux<T> {
    /// Flux of cluster `q` averaged over its own cells: `(1/|cells|) Σ (A₂ - A₁) g`.
    pub fn normalized(&self, q: usize, cells: usize) -> Vec<T> {
        let count = of_usize::<T>(self.cells_per_cluster[q]);
        let total = of_usize::<T>(cells);
        self.per_cluster[q].iter().map(|&v| v * total / count).collect()
    }
}

/// Per-cluster decomposition of the inclusion flux for one solved direction.
///
/// Overlapping inclusions always share a cluster, so every inclusion cell has
/// a unique owner.
pub fn inclusion_flux_average<T: Real>(
    field: &GridField<T>,
    solution: &DirectionSolution<T>,
    sample: &PointSample<T>,
    clusters: &Clusters,
) -> Result<InclusionFlux<T>> {
    let d = field.dim();
    if solution.gradient.len() != d {
        return Err(Error::config("solution", "gradient fields were not kept"));
    }
    let cells = field.cells();
    let mut owner = vec![u32::MAX; cells];
    for (q, group) in clusters.groups.iter().enumerate() {
        for &i in group {
            for_each_cell_in_ball(&field.torus, field.n(), sample.center(i), |c| {
                owner[c] = q as u32;
            });
        }
    }
    let nq = clusters.len();
    let mut sums = vec![vec![T::zero(); d]; nq];
    let mut counts = vec![0usize; nq];
    for (c, &q) in owner.iter().enumerate() {
        if q != u32::MAX {
            let q = q as usize;
            counts[q] += 1;
            for k in 0..d {
                sums[q][k] = sums[q][k] + solution.gradient[k][c];
            }
        }
    }
    let jump = *field.phases.a2() - *field.phases.a1();
    let inv = T::one() / of_usize::<T>(cells);
    let per_cluster: Vec<Vec<T>> = sums
        .iter()
        .map(|s| jump.mul_vec(s).into_iter().map(|v| v * inv).collect())
        .collect();
    let mut global = vec![T::zero(); d];
    for pc in &per_cluster {
        for k in 0..d {
            global[k] = global[k] + pc[k];
        }
    }
    Ok(InclusionFlux {
        per_cluster,
        cells_per_cluster: counts,
        global,
    })
}
