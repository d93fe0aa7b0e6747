//! Empirical second-order intensity from an ensemble of samples.
//!
//! Ordered pairs `(x1, x2)` are binned by their minimum-image displacement
//! `x2 - x1` into cubes of side `s`. With `M` samples on a torus of volume
//! `L^d`, the bin count divided by `M L^d s^d` estimates the cube average of
//! the two-point density; the maximum over bins inside the cutoff is `λ̂₂`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::PointSample;
use crate::scalar::{of_usize, Real};
use crate::spatial::CellList;

/// Side of the displacement cubes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinSide<T> {
    /// Contact scale `ℓ` of a hardcore process.
    Contact(T),
    /// Smoothing width for processes without a positive contact scale.
    Width(T),
}

impl<T: Real> BinSide<T> {
    pub fn value(&self) -> T {
        match *self {
            BinSide::Contact(v) | BinSide::Width(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lambda2Config<T> {
    /// Bin width used when no contact scale is given (default: inclusion radius 1).
    pub bin_width: T,
    /// Sup-norm displacement cutoff; `None` means `L/4`.
    pub cutoff: Option<T>,
}

impl<T: Real> Default for Lambda2Config<T> {
    fn default() -> Self {
        Self {
            bin_width: T::one(),
            cutoff: None,
        }
    }
}

impl<T: Real> Lambda2Config<T> {
    /// Contact scale if positive and finite, otherwise the configured width.
    pub fn bin_side(&self, contact_scale: Option<T>) -> BinSide<T> {
        match contact_scale {
            Some(l) if l > T::zero() && Float::is_finite(l) => BinSide::Contact(l),
            _ => BinSide::Width(self.bin_width),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambda2Estimate<T> {
    pub lambda2: T,
    /// Empirical intensity over the ensemble.
    pub lambda: T,
    pub bin_side: T,
    pub cutoff: T,
    /// Lower-corner displacement of the maximising bin.
    pub argmax: Vec<T>,
    pub max_count: u64,
    pub ensemble_size: usize,
    /// Maximising bin touches the cutoff.
    pub at_cutoff: bool,
    /// Relative 3σ counting error of the maximising bin.
    pub rel_err_3sigma: T,
    /// `λ̂₂ > λ̂ (1 + 3σ)`, which no stationary process allows.
    pub exceeds_upper_bound: bool,
}

/// Ordered-pair displacement counts over the cubes inside the cutoff.
#[derive(Clone, Debug, PartialEq)]
pub struct PairHistogram<T> {
    pub d: usize,
    pub bin_side: T,
    /// Bins per axis on each side of zero.
    pub half_bins: usize,
    pub counts: Vec<u64>,
    pub points: usize,
    pub ensemble_size: usize,
}

impl<T: Real> PairHistogram<T> {
    pub fn per_axis(&self) -> usize {
        2 * self.half_bins
    }

    /// Lower corner of bin `flat` (axis 0 slowest).
    pub fn lower_corner(&self, flat: usize) -> Vec<T> {
        let per_axis = self.per_axis();
        let mut corner = vec![T::zero(); self.d];
        let mut rem = flat;
        for ax in (0..self.d).rev() {
            let k = rem % per_axis;
            rem /= per_axis;
            corner[ax] = (T::lit(k as f64) - of_usize::<T>(self.half_bins)) * self.bin_side;
        }
        corner
    }

    fn touches_cutoff(&self, flat: usize) -> bool {
        let per_axis = self.per_axis();
        let mut rem = flat;
        (0..self.d).any(|_| {
            let k = rem % per_axis;
            rem /= per_axis;
            k == 0 || k == per_axis - 1
        })
    }
}

/// Bins ordered pairs of every sample by minimum-image displacement.
pub fn pair_histogram<T: Real>(
    samples: &[PointSample<T>],
    side: BinSide<T>,
    cfg: &Lambda2Config<T>,
) -> Result<PairHistogram<T>> {
    let first = samples.first().ok_or(Error::EmptyEnsemble)?;
    let torus = first.torus;
    if samples.iter().any(|s| s.torus != torus) {
        return Err(Error::config("samples", "ensemble members must share one torus"));
    }
    let s = side.value();
    if !(s > T::zero()) {
        return Err(Error::config("bin_side", format!("must be > 0, got {s}")));
    }
    let d = torus.d;
    let cutoff = cfg.cutoff.unwrap_or(torus.side / T::lit(4.0));
    let half_bins = Float::floor(cutoff / s).to_f64_lossy() as usize;
    if half_bins == 0 {
        return Err(Error::config("cutoff", "cutoff is smaller than one bin"));
    }
    let per_axis = 2 * half_bins;
    let reach = of_usize::<T>(half_bins) * s;
    let mut counts = vec![0u64; per_axis.pow(d as u32)];
    let kmax = half_bins as isize;
    let bin_of = |disp: &[T]| -> Option<usize> {
        let mut flat = 0usize;
        for &x in disp.iter() {
            let k = Float::floor(x / s).to_f64_lossy() as isize;
            if k < -kmax || k >= kmax {
                return None;
            }
            flat = flat * per_axis + (k + kmax) as usize;
        }
        Some(flat)
    };

    let euclid_reach = reach * Float::sqrt(of_usize::<T>(d)) * T::lit(1.0 + 1e-12);
    let mut points = 0usize;
    let mut neg = vec![T::zero(); d];
    for sample in samples {
        points += sample.len();
        let cl = CellList::new(sample, euclid_reach);
        cl.for_each_pair_within(sample, euclid_reach, |_, _, disp, _| {
            if let Some(b) = bin_of(disp) {
                counts[b] += 1;
            }
            for (n, &x) in neg.iter_mut().zip(disp) {
                *n = -x;
            }
            if let Some(b) = bin_of(&neg) {
                counts[b] += 1;
            }
        });
    }
    Ok(PairHistogram {
        d,
        bin_side: s,
        half_bins,
        counts,
        points,
        ensemble_size: samples.len(),
    })
}

/// Bin-maximum estimate of `λ₂`; every sample must live on the same torus.
pub fn estimate_lambda2<T: Real>(
    samples: &[PointSample<T>],
    side: BinSide<T>,
    cfg: &Lambda2Config<T>,
) -> Result<Lambda2Estimate<T>> {
    let hist = pair_histogram(samples, side, cfg)?;
    let torus = samples[0].torus;
    let d = hist.d;
    let s = hist.bin_side;
    let (best, &max_count) = hist
        .counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .expect("at least one bin");
    let m = of_usize::<T>(samples.len());
    let vol = torus.volume();
    let norm = m * vol * Float::powi(s, d as i32);
    let lambda2 = T::lit(max_count as f64) / norm;
    let lambda = of_usize::<T>(hist.points) / (m * vol);
    let rel_err_3sigma = if max_count > 0 {
        T::lit(3.0 / (max_count as f64).sqrt())
    } else {
        T::infinity()
    };
    let exceeds_upper_bound = lambda2 > lambda * (T::one() + rel_err_3sigma);
    Ok(Lambda2Estimate {
        lambda2,
        lambda,
        bin_side: s,
        cutoff: of_usize::<T>(hist.half_bins) * s,
        argmax: hist.lower_corner(best),
        max_count,
        ensemble_size: samples.len(),
        at_cutoff: hist.touches_cutoff(best),
        rel_err_3sigma,
        exceeds_upper_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{ProcessSpec, TorusSpec};

    #[test]
    fn empty_ensemble_is_an_error() {
        let r = estimate_lambda2::<f64>(&[], BinSide::Width(1.0), &Lambda2Config::default());
        assert!(matches!(r, Err(Error::EmptyEnsemble)));
    }

    fn exact_lattice(a: f64, l: f64) -> PointSample<f64> {
        // Cell-centred lattice: all coordinates and differences are exact in binary.
        let per = (l / a) as usize;
        let mut pts = Vec::new();
        for i in 0..per {
            for j in 0..per {
                pts.push(vec![(i as f64 + 0.5) * a, (j as f64 + 0.5) * a]);
            }
        }
        PointSample::from_centers(
            TorusSpec::new(2, l).unwrap(),
            ProcessSpec::JitteredLattice {
                spacing: a,
                jitter: 0.0,
            },
            0,
            &pts,
        )
        .unwrap()
    }

    #[test]
    fn exact_lattice_only_fills_lattice_displacement_bins() {
        let samples = vec![exact_lattice(8.0, 64.0); 10];
        // Bins of side 3: each lattice vector lies strictly inside one bin.
        let hist = pair_histogram(&samples, BinSide::Width(3.0), &Lambda2Config::default()).unwrap();
        let mut occupied = 0;
        for (flat, &c) in hist.counts.iter().enumerate() {
            let lo = hist.lower_corner(flat);
            // [x, x + 3) contains a multiple of 8 iff ceil(x / 8) * 8 < x + 3.
            let axis_hits = |x: f64| (x / 8.0).ceil() * 8.0 < x + 3.0;
            let holds_zero = lo.iter().all(|&x| x <= 0.0 && x + 3.0 > 0.0);
            let holds_lattice_vector = lo.iter().all(|&x| axis_hits(x)) && !holds_zero;
            if holds_lattice_vector {
                occupied += 1;
                assert_eq!(c, 10 * 64, "bin at {lo:?}");
            } else {
                assert_eq!(c, 0, "bin at {lo:?}");
            }
        }
        // Lattice vectors within the cutoff window [-15, 15)^2, excluding 0.
        assert_eq!(occupied, 8);
    }

    #[test]
    fn lattice_estimate_equals_lambda_squared_at_contact_scale() {
        let samples = vec![exact_lattice(8.0, 64.0); 10];
        let est =
            estimate_lambda2(&samples, BinSide::Contact(8.0), &Lambda2Config::default()).unwrap();
        let lambda2 = crate::point_process::analytic_lambda2(
            &ProcessSpec::JitteredLattice {
                spacing: 8.0,
                jitter: 0.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(est.lambda2, lambda2);
        assert_eq!(est.lambda, 1.0 / 64.0);
        assert!(!est.exceeds_upper_bound);
    }
}
