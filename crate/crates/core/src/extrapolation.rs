//! First-order Richardson extrapolation of scalar and matrix sequences.
//!
//! A quantity sampled at parameters `t_1 > t_2 > … > 0` is modelled as
//! `v(t) = v* + c t`; each consecutive pair gives the estimate
//! `v* = (t_1 v_2 - t_2 v_1) / (t_1 - t_2)`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Two-level linear extrapolation to `t = 0`.
pub fn richardson<T: Real>(t1: T, v1: T, t2: T, v2: T) -> T {
    (t1 * v2 - t2 * v1) / (t1 - t2)
}

/// Coefficients `(c1, c2)` with `v* = c1 v1 + c2 v2`.
pub fn richardson_weights<T: Real>(t1: T, t2: T) -> (T, T) {
    let den = t1 - t2;
    (-t2 / den, t1 / den)
}

pub fn richardson_tensor<T: Real>(t1: T, m1: &Tensor<T>, t2: T, m2: &Tensor<T>) -> Tensor<T> {
    m1.zip_map(m2, |a, b| richardson(t1, a, t2, b))
}

/// Extrapolated matrix with its diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct Extrapolation<T: Real> {
    pub value: Tensor<T>,
    /// Difference of the last two extrapolants (three or more levels), else
    /// the size of the last correction, in max-abs norm.
    pub error: T,
    /// Consecutive differences keep their sign and shrink in every entry
    /// that exceeds `noise`.
    pub monotone: bool,
    pub levels: Vec<(T, Tensor<T>)>,
}

/// Extrapolates `values[i]` sampled at strictly decreasing `ts[i] > 0`.
pub fn extrapolate_sequence<T: Real>(ts: &[T], values: &[Tensor<T>], noise: T) -> Result<Extrapolation<T>> {
    if ts.len() != values.len() || ts.len() < 2 {
        return Err(Error::config(
            "levels",
            format!("need at least two matching levels, got {} and {}", ts.len(), values.len()),
        ));
    }
    if ts.windows(2).any(|w| !(w[1] < w[0])) || ts.iter().any(|&t| !(t > T::zero())) {
        return Err(Error::config("levels", "parameters must be positive and strictly decreasing"));
    }
    let n = ts.len();
    let estimates: Vec<Tensor<T>> = (0..n - 1)
        .map(|i| richardson_tensor(ts[i], &values[i], ts[i + 1], &values[i + 1]))
        .collect();
    let value = estimates[n - 2];
    let error = if n >= 3 {
        (value - estimates[n - 3]).max_abs()
    } else {
        (value - values[n - 1]).max_abs()
    };
    let diffs: Vec<Tensor<T>> = (0..n - 1).map(|i| values[i + 1] - values[i]).collect();
    let mut monotone = true;
    for w in diffs.windows(2) {
        for (a, b) in w[0].to_row_major().into_iter().zip(w[1].to_row_major()) {
            if Float::abs(a) <= noise && Float::abs(b) <= noise {
                continue;
            }
            if a * b < T::zero() || Float::abs(b) > Float::abs(a) {
                monotone = false;
            }
        }
    }
    Ok(Extrapolation {
        value,
        error,
        monotone,
        levels: ts.iter().copied().zip(values.iter().copied()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_linear_models() {
        assert_eq!(richardson(0.5, 3.0 + 0.5 * 2.0, 0.25, 3.0 + 0.25 * 2.0), 3.0);
        let (c1, c2) = richardson_weights(1.0 / 16.0, 1.0 / 64.0);
        assert!((c1 + c2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sequence_flags_oscillation() {
        let t = [1.0, 0.5, 0.25];
        let mk = |v: f64| Tensor::scaled_identity(2, v);
        let good = extrapolate_sequence(&t, &[mk(2.0), mk(1.5), mk(1.25)], 1e-12).unwrap();
        assert!(good.monotone);
        assert!((good.value.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(good.error < 1e-15);
        let bad = extrapolate_sequence(&t, &[mk(2.0), mk(1.5), mk(1.7)], 1e-12).unwrap();
        assert!(!bad.monotone);
    }

    #[test]
    fn rejects_unordered_levels() {
        let m = Tensor::<f64>::identity(2);
        assert!(extrapolate_sequence(&[0.5, 1.0], &[m, m], 0.0).is_err());
        assert!(extrapolate_sequence(&[0.5], &[m], 0.0).is_err());
    }
}
