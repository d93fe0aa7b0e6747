//! Two-phase conductivities and the closed-form single-inclusion solution.
//!
//! For `A₁ = αI`, `A₂ = βI` and a unit ball at the origin, the whole-space
//! corrector gradient of the single-inclusion problem is
//!
//! ```text
//! ∇ψ_e(x) = K e                                   |x| < 1
//! ∇ψ_e(x) = K |x|^{-d} (e - d (x·e/|x|) x/|x|)    |x| > 1
//! K = (α - β) / (β + α (d - 1))
//! ```
//!
//! and the first-order correction is `Â₂ = (β - α)(1 + K) I`, which equals
//! the Clausius–Mossotti amplitude `α d (β - α) / (β + α (d - 1))`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::corrector::{effective_tensor, Scheme, SolverConfig};
use crate::error::{Error, Result};
use crate::extrapolation::extrapolate_sequence;
use crate::microstructure::GridField;
use crate::point_process::{PointSample, ProcessSpec, TorusSpec};
use crate::scalar::{Field, Real};
use crate::tensor::Tensor;

/// Matrix and inclusion conductivities.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PhaseModelRepr<T>", into = "PhaseModelRepr<T>")]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct PhaseModel<T> {
    a1: Tensor<T>,
    a2: Tensor<T>,
    /// Eigenvalues of both symmetric parts lie in `[c0, 1/c0]`.
    c0: T,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
struct PhaseModelRepr<T> {
    #[serde(rename = "A1")]
    a1: Tensor<T>,
    #[serde(rename = "A2")]
    a2: Tensor<T>,
}

impl<T: Real> std::fmt::Debug for PhaseModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhaseModel")
            .field("A1", &self.a1)
            .field("A2", &self.a2)
            .field("c0", &self.c0)
            .finish()
    }
}

impl<T: Real> TryFrom<PhaseModelRepr<T>> for PhaseModel<T> {
    type Error = Error;
    fn try_from(r: PhaseModelRepr<T>) -> Result<Self> {
        PhaseModel::new(r.a1, r.a2)
    }
}

impl<T: Real> From<PhaseModel<T>> for PhaseModelRepr<T> {
    fn from(p: PhaseModel<T>) -> Self {
        PhaseModelRepr { a1: p.a1, a2: p.a2 }
    }
}

impl<T: Real> PhaseModel<T> {
    pub fn new(a1: Tensor<T>, a2: Tensor<T>) -> Result<Self> {
        if a1.dim() != a2.dim() {
            return Err(Error::config(
                "phases",
                format!("A1 is {0}x{0} but A2 is {1}x{1}", a1.dim(), a2.dim()),
            ));
        }
        let mut c0 = T::infinity();
        for (name, a) in [("A1", &a1), ("A2", &a2)] {
            if a.to_row_major().iter().any(|x| !Float::is_finite(*x)) {
                return Err(Error::config(name, "entries must be finite"));
            }
            let eig = a.symmetric_part().symmetric_eigenvalues();
            let (lo, hi) = (eig[0], eig[eig.len() - 1]);
            if !(lo > T::zero()) {
                return Err(Error::config(
                    name,
                    format!("symmetric part must be positive definite (smallest eigenvalue {lo})"),
                ));
            }
            c0 = Float::min(c0, Float::min(lo, T::one() / hi));
        }
        Ok(Self { a1, a2, c0 })
    }

    pub fn isotropic(alpha: T, beta: T, d: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::config("d", format!("dimension must be 1..=3, got {d}")));
        }
        if !(alpha > T::zero()) {
            return Err(Error::config("alpha", format!("must be > 0, got {alpha}")));
        }
        if !(beta > T::zero()) {
            return Err(Error::config("beta", format!("must be > 0, got {beta}")));
        }
        Self::new(Tensor::scaled_identity(d, alpha), Tensor::scaled_identity(d, beta))
    }

    pub fn a1(&self) -> &Tensor<T> {
        &self.a1
    }

    pub fn a2(&self) -> &Tensor<T> {
        &self.a2
    }

    /// Conductivity of phase `0` (matrix) or `1` (inclusion).
    pub fn phase(&self, p: u8) -> &Tensor<T> {
        if p == 0 {
            &self.a1
        } else {
            &self.a2
        }
    }

    pub fn dim(&self) -> usize {
        self.a1.dim()
    }

    pub fn ellipticity(&self) -> T {
        self.c0
    }

    /// `(α, β)` when both phases are multiples of the identity.
    pub fn isotropic_scalars(&self) -> Option<(T, T)> {
        Some((self.a1.isotropic_scalar()?, self.a2.isotropic_scalar()?))
    }

    pub fn is_symmetric(&self) -> bool {
        let tol = T::lit(1e-14);
        self.a1.is_symmetric(tol) && self.a2.is_symmetric(tol)
    }

    pub fn is_contrast_free(&self) -> bool {
        self.a1 == self.a2
    }

    /// Extreme eigenvalues of the symmetric parts over both phases.
    pub fn eigen_range(&self) -> (T, T) {
        let mut lo = T::infinity();
        let mut hi = T::neg_infinity();
        for a in [&self.a1, &self.a2] {
            let eig = a.symmetric_part().symmetric_eigenvalues();
            lo = Float::min(lo, eig[0]);
            hi = Float::max(hi, eig[eig.len() - 1]);
        }
        (lo, hi)
    }

    /// Largest operator norm over both phases.
    pub fn max_operator_norm(&self) -> T {
        Float::max(self.a1.operator_norm(), self.a2.operator_norm())
    }
}

fn check_positive<T: Field>(alpha: T, beta: T) -> Result<()> {
    if !(alpha > T::zero()) || !(beta > T::zero()) {
        return Err(Error::Domain(format!(
            "conductivities must be positive, got alpha = {alpha:?}, beta = {beta:?}"
        )));
    }
    Ok(())
}

/// Dipole strength `K = (α - β) / (β + α (d - 1))`.
pub fn dipole_k<T: Field>(alpha: T, beta: T, d: usize) -> Result<T> {
    check_positive(alpha, beta)?;
    if d == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let dm1 = T::from_usize_exact(d - 1);
    Ok((alpha - beta) / (beta + alpha * dm1))
}

/// Clausius–Mossotti amplitude `α d (β - α) / (β + α (d - 1))`.
pub fn clausius_mossotti_amplitude<T: Field>(alpha: T, beta: T, d: usize) -> Result<T> {
    check_positive(alpha, beta)?;
    if d == 0 {
        return Err(Error::Domain("dimension must be >= 1".into()));
    }
    let dd = T::from_usize_exact(d);
    let dm1 = T::from_usize_exact(d - 1);
    Ok(alpha * dd * (beta - alpha) / (beta + alpha * dm1))
}

/// Scalar first-order correction `(β - α)(1 + K)`, returned in the
/// Clausius–Mossotti form, which does not cancel at high contrast.
pub fn hat_a2_isotropic_scalar<T: Field>(alpha: T, beta: T, d: usize) -> Result<T> {
    let k = dipole_k(alpha, beta, d)?;
    let jump = beta - alpha;
    let v = jump * (T::one() + k);
    let cm = clausius_mossotti_amplitude(alpha, beta, d)?;
    // `1 + K` cancels, so the dipole form carries an error of order ε |β - α|.
    let scale = if jump < T::zero() { T::zero() - jump } else { jump };
    if !v.approx_eq_scaled(cm, scale) {
        return Err(Error::Domain(format!(
            "dipole and Clausius-Mossotti amplitudes disagree: {v:?} vs {cm:?}"
        )));
    }
    Ok(cm)
}

/// `Â₂ = (β - α)(1 + K) I` for isotropic phases.
pub fn hat_a2_isotropic<T: Real>(alpha: T, beta: T, d: usize) -> Result<Tensor<T>> {
    Ok(Tensor::scaled_identity(d, hat_a2_isotropic_scalar(alpha, beta, d)?))
}

/// Gradient of the single-inclusion corrector `ψ_e` at `x` (`|x| ≠ 1`).
pub fn psi_gradient<T: Real>(x: &[T], e: &[T], alpha: T, beta: T) -> Result<Vec<T>> {
    let d = x.len();
    if e.len() != d {
        return Err(Error::Domain(format!(
            "x has {d} components but e has {}",
            e.len()
        )));
    }
    let k = dipole_k(alpha, beta, d)?;
    let r2: T = x.iter().map(|&v| v * v).sum();
    if r2 == T::one() {
        return Err(Error::Interface);
    }
    if r2 < T::one() {
        return Ok(e.iter().map(|&v| k * v).collect());
    }
    let r = Float::sqrt(r2);
    let xe: T = x.iter().zip(e).map(|(&a, &b)| a * b).sum();
    let dd = T::lit(d as f64);
    let scale = k / Float::powi(r, d as i32);
    Ok(x
        .iter()
        .zip(e)
        .map(|(&xi, &ei)| scale * (ei - dd * xe * xi / r2))
        .collect())
}

/// Single-inclusion potential `ψ_e`: `K x·e` inside, `K (x·e) |x|^{-d}` outside.
pub fn psi_potential<T: Real>(x: &[T], e: &[T], alpha: T, beta: T) -> Result<T> {
    let d = x.len();
    let k = dipole_k(alpha, beta, d)?;
    let r2: T = x.iter().map(|&v| v * v).sum();
    let xe: T = x.iter().zip(e).map(|(&a, &b)| a * b).sum();
    if r2 <= T::one() {
        Ok(k * xe)
    } else {
        Ok(k * xe / Float::powi(Float::sqrt(r2), d as i32))
    }
}

/// Clausius–Mossotti prediction `A₁ + φ Â₂` with closed-form `Â₂`.
///
/// Requires isotropic phases; use [`cm_prediction_with`] otherwise.
pub fn cm_prediction<T: Real>(phases: &PhaseModel<T>, phi: T) -> Result<Tensor<T>> {
    let (alpha, beta) = phases.isotropic_scalars().ok_or_else(|| {
        Error::Domain("closed-form prediction needs isotropic phases; supply a numeric correction".into())
    })?;
    let hat = hat_a2_isotropic(alpha, beta, phases.dim())?;
    cm_prediction_with(phases, &hat, phi)
}

/// `A₁ + φ Â₂` for a given first-order correction.
pub fn cm_prediction_with<T: Real>(
    phases: &PhaseModel<T>,
    hat_a2: &Tensor<T>,
    phi: T,
) -> Result<Tensor<T>> {
    if !(phi >= T::zero() && phi <= T::one()) {
        return Err(Error::Domain(format!("volume fraction must lie in [0, 1], got {phi}")));
    }
    Ok(*phases.a1() + hat_a2.scale(phi))
}

/// Settings for the periodic single-inclusion computation of `Â₂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct HatA2Config<T> {
    /// Torus sides, increasing; `None` means `{16, 32, 64}` in 2D and `{8, 16, 32}` in 3D.
    pub sides: Option<Vec<T>>,
    /// Cells per unit length (`N = L · cells_per_unit`).
    pub cells_per_unit: usize,
    pub solver: SolverConfig<T>,
}

impl<T: Real> Default for HatA2Config<T> {
    fn default() -> Self {
        Self {
            sides: None,
            cells_per_unit: 4,
            solver: SolverConfig::default().with_tol(T::lit(1e-10)),
        }
    }
}

impl<T: Real> HatA2Config<T> {
    pub fn resolved_sides(&self, d: usize) -> Vec<T> {
        self.sides.clone().unwrap_or_else(|| {
            let s: &[f64] = if d == 2 { &[16.0, 32.0, 64.0] } else { &[8.0, 16.0, 32.0] };
            s.iter().map(|&v| T::lit(v)).collect()
        })
    }
}

/// Numerically extrapolated first-order correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct HatA2Estimate<T: Real> {
    pub value: Tensor<T>,
    pub error: T,
    /// Non-monotone tail in the side sequence.
    pub flagged: bool,
    /// `(L, (Ā_L - A₁) / φ̂_L)` per torus.
    pub per_side: Vec<(T, Tensor<T>)>,
    pub cells_per_unit: usize,
}

/// `Â₂` from one node-centered unit inclusion on tori of increasing side,
/// extrapolated in `L^{-d}`. The raster volume fraction normalizes each level,
/// so the result belongs to the rasterized inclusion shape at this resolution.
pub fn hat_a2_numeric<T: Real>(phases: &PhaseModel<T>, cfg: &HatA2Config<T>) -> Result<HatA2Estimate<T>> {
    let d = phases.dim();
    if !(2..=3).contains(&d) {
        return Err(Error::config("d", "the numeric correction needs d = 2 or 3"));
    }
    let sides = cfg.resolved_sides(d);
    if sides.len() < 2 {
        return Err(Error::config("sides", "need at least two torus sides"));
    }
    if sides.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::config("sides", "torus sides must increase"));
    }
    let mut solver = cfg.solver;
    if solver.scheme == Scheme::ConjugateGradient && !phases.is_symmetric() {
        solver = SolverConfig {
            scheme: Scheme::FixedPoint,
            alpha0: None,
            ..solver
        };
    }
    let r = T::lit(cfg.cells_per_unit as f64);
    let mut per_side = Vec::with_capacity(sides.len());
    for &l in &sides {
        let n = (l * r).to_f64_lossy();
        if n.fract() != 0.0 {
            return Err(Error::config("sides", format!("L * cells_per_unit must be an integer, got {n}")));
        }
        let n = n as usize;
        let torus = TorusSpec::new(d, l)?;
        let center = vec![l / T::lit(2.0); d];
        let sample = PointSample::from_centers(torus, ProcessSpec::Poisson { lambda: T::one() / torus.volume() }, 0, &[center])?;
        let field = GridField::rasterize(&sample, *phases, n)?;
        let phi = field.volume_fraction();
        let abar = if phases.is_contrast_free() {
            *phases.a1()
        } else {
            effective_tensor(&field, &solver)?.abar
        };
        per_side.push((l, (abar - *phases.a1()).scale(T::one() / phi)));
    }
    let ts: Vec<T> = per_side.iter().map(|(l, _)| Float::powi(*l, -(d as i32))).collect();
    let vals: Vec<Tensor<T>> = per_side.iter().map(|(_, v)| *v).collect();
    let noise = T::lit(10.0) * solver.tol * phases.max_operator_norm();
    let ex = extrapolate_sequence(&ts, &vals, noise)?;
    Ok(HatA2Estimate {
        value: ex.value,
        error: ex.error,
        flagged: !ex.monotone,
        per_side,
        cells_per_unit: cfg.cells_per_unit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn dipole_constant_examples_exact() {
        let r = |n, d| Ratio::<i64>::new(n, d);
        assert_eq!(dipole_k(r(1, 1), r(3, 1), 3).unwrap(), r(-2, 5));
        assert_eq!(dipole_k(r(1, 1), r(2, 1), 2).unwrap(), r(-1, 3));
        assert_eq!(dipole_k(r(7, 3), r(7, 3), 2).unwrap(), r(0, 1));
    }

    #[test]
    fn amplitude_example_exact() {
        let r = |n| Ratio::<i64>::from_integer(n);
        assert_eq!(hat_a2_isotropic_scalar(r(1), r(3), 3).unwrap(), Ratio::new(6, 5));
    }

    #[test]
    fn non_positive_conductivity_is_domain_error() {
        assert!(matches!(dipole_k(0.0, 1.0, 2), Err(Error::Domain(_))));
        assert!(matches!(dipole_k(1.0, -2.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn interface_is_rejected() {
        let r = psi_gradient(&[1.0, 0.0], &[1.0, 0.0], 1.0, 2.0);
        assert!(matches!(r, Err(Error::Interface)));
    }

    #[test]
    fn cm_prediction_examples() {
        let p = PhaseModel::isotropic(1.0, 3.0, 3).unwrap();
        assert_eq!(cm_prediction(&p, 0.0).unwrap(), *p.a1());
        let cm = cm_prediction(&p, 0.01).unwrap();
        assert!((cm.get(0, 0) - 1.012).abs() < 1e-15);
        assert!(matches!(cm_prediction(&p, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn phase_model_rejects_indefinite() {
        let bad = Tensor::diagonal(&[1.0, -1.0]);
        assert!(PhaseModel::new(Tensor::identity(2), bad).is_err());
    }

    #[test]
    fn phase_model_json_round_trip() {
        let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"A1":[[1.0,0.0],[0.0,1.0]],"A2":[[2.0,0.0],[0.0,2.0]]}"#);
        let q: PhaseModel<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn numeric_correction_matches_closed_form_within_one_percent() {
        let p = PhaseModel::isotropic(1.0, 2.0, 2).unwrap();
        let est = hat_a2_numeric(&p, &HatA2Config::default()).unwrap();
        let exact = 2.0 / 3.0;
        assert!((est.value.get(0, 0) / exact - 1.0).abs() < 0.01, "{:?}", est.value);
        assert!((est.value.get(1, 1) / exact - 1.0).abs() < 0.01);
        assert!(est.value.get(0, 1).abs() < 1e-8);
        assert!(!est.flagged);
    }

    #[test]
    fn numeric_correction_vanishes_without_contrast() {
        let a = Tensor::from_rows(&[vec![2.0, 0.5], vec![-0.5, 1.0]]).unwrap();
        let p = PhaseModel::new(a, a).unwrap();
        let est = hat_a2_numeric(&p, &HatA2Config::default()).unwrap();
        assert_eq!(est.value, Tensor::zeros(2));
    }

    #[test]
    fn numeric_correction_respects_reflections() {
        let p = PhaseModel::new(Tensor::identity(2), Tensor::diagonal(&[2.0, 3.0])).unwrap();
        let cfg = HatA2Config {
            sides: Some(vec![16.0, 32.0]),
            ..HatA2Config::default()
        };
        let est = hat_a2_numeric(&p, &cfg).unwrap();
        assert!(est.value.get(0, 1).abs() < 1e-6 && est.value.get(1, 0).abs() < 1e-6);
        assert!(est.value.get(1, 1) > est.value.get(0, 0));
    }
}
