//! Small dense `d x d` matrices (`d <= 3`) for conductivities and effective tensors.

use std::fmt;
use std::ops::{Add, Mul, Sub};

use num_traits::Float;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MAX_DIM: usize = 3;

/// Row-major `d x d` matrix with `1 <= d <= 3`.
#[derive(Clone, Copy, PartialEq)]
pub struct Tensor<T> {
    d: usize,
    a: [[T; MAX_DIM]; MAX_DIM],
}

impl<T: Real> Tensor<T> {
    pub fn zeros(d: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&d), "tensor dimension must be 1..=3, got {d}");
        Self {
            d,
            a: [[T::zero(); MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::scaled_identity(d, T::one())
    }

    pub fn scaled_identity(d: usize, s: T) -> Self {
        let mut m = Self::zeros(d);
        for i in 0..d {
            m.a[i][i] = s;
        }
        m
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.a[i][i] = v;
        }
        m
    }

    /// Builds from rows; every row must have length `rows.len()`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.len();
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::config("matrix", format!("must be 1x1 to 3x3, got {d} rows")));
        }
        let mut m = Self::zeros(d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::config(
                    "matrix",
                    format!("row {i} has {} entries, expected {d}", row.len()),
                ));
            }
            for (j, &v) in row.iter().enumerate() {
                m.a[i][j] = v;
            }
        }
        Ok(m)
    }

    /// Builds from `d` column vectors.
    pub fn from_columns(cols: &[Vec<T>]) -> Self {
        let d = cols.len();
        let mut m = Self::zeros(d);
        for (j, col) in cols.iter().enumerate() {
            assert_eq!(col.len(), d);
            for (i, &v) in col.iter().enumerate() {
                m.a[i][j] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.d && j < self.d);
        self.a[i][j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.d && j < self.d);
        self.a[i][j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        (0..self.d).map(|i| self.a[i][..self.d].to_vec()).collect()
    }

    /// Row-major entries.
    pub fn to_row_major(&self) -> Vec<T> {
        self.rows().into_iter().flatten().collect()
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.d).map(|i| self.a[i][j]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                m.a[j][i] = self.a[i][j];
            }
        }
        m
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        let mut m = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                m.a[i][j] = f(self.a[i][j]);
            }
        }
        m
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.d, other.d, "tensor dimension mismatch");
        let mut m = *self;
        for i in 0..self.d {
            for j in 0..self.d {
                m.a[i][j] = f(self.a[i][j], other.a[i][j]);
            }
        }
        m
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        (0..self.d)
            .map(|i| (0..self.d).fold(T::zero(), |acc, j| acc + self.a[i][j] * x[j]))
            .collect()
    }

    pub fn trace(&self) -> T {
        (0..self.d).fold(T::zero(), |acc, i| acc + self.a[i][i])
    }

    pub fn symmetric_part(&self) -> Self {
        let half = T::lit(0.5);
        self.zip_map(&self.transpose(), |a, b| half * (a + b))
    }

    pub fn antisymmetric_part(&self) -> Self {
        let half = T::lit(0.5);
        self.zip_map(&self.transpose(), |a, b| half * (a - b))
    }

    pub fn frobenius_norm(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.d {
            for j in 0..self.d {
                s = s + self.a[i][j] * self.a[i][j];
            }
        }
        Float::sqrt(s)
    }

    pub fn max_abs(&self) -> T {
        let mut s = T::zero();
        for i in 0..self.d {
            for j in 0..self.d {
                s = Float::max(s, Float::abs(self.a[i][j]));
            }
        }
        s
    }

    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        let scale = Float::max(self.max_abs(), T::min_positive_value());
        self.antisymmetric_part().max_abs() <= rel_tol * scale
    }

    /// True when the matrix is a multiple of the identity.
    pub fn isotropic_scalar(&self) -> Option<T> {
        let s = self.a[0][0];
        let iso = Self::scaled_identity(self.d, s);
        if *self == iso {
            Some(s)
        } else {
            None
        }
    }

    /// Eigenvalues of the symmetric part, ascending (cyclic Jacobi).
    pub fn symmetric_eigenvalues(&self) -> Vec<T> {
        let mut m = self.symmetric_part().a;
        let d = self.d;
        for _sweep in 0..64 {
            let mut off = T::zero();
            for p in 0..d {
                for q in (p + 1)..d {
                    off = off + m[p][q] * m[p][q];
                }
            }
            let scale = (0..d).fold(T::zero(), |acc, i| acc + m[i][i] * m[i][i]);
            if off <= T::eps() * T::eps() * Float::max(scale, T::min_positive_value()) {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    if m[p][q] == T::zero() {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (T::lit(2.0) * m[p][q]);
                    let t = Float::signum(theta)
                        / (Float::abs(theta) + Float::sqrt(theta * theta + T::one()));
                    let t = if theta == T::zero() { T::one() } else { t };
                    let c = T::one() / Float::sqrt(t * t + T::one());
                    let s = t * c;
                    for k in 0..d {
                        let mkp = m[k][p];
                        let mkq = m[k][q];
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..d {
                        let mpk = m[p][k];
                        let mqk = m[q][k];
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<T> = (0..d).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalue is NaN"));
        ev
    }

    /// Spectral (operator 2-) norm.
    pub fn operator_norm(&self) -> T {
        let gram = self.transpose() * *self;
        let ev = gram.symmetric_eigenvalues();
        Float::sqrt(Float::max(*ev.last().expect("d >= 1"), T::zero()))
    }

    /// Average of `R M R^T` over all signed permutations `R` of the axes.
    ///
    /// For any matrix this is `tr(M)/d * Id`.
    pub fn cubic_average(&self) -> Self {
        Self::scaled_identity(self.d, self.trace() / T::from_usize_exact(self.d))
    }

    /// `R M R^T` for the signed permutation `x_i -> sign_i * x_{perm_i}`.
    pub fn conjugate_signed_permutation(&self, perm: &[usize], signs: &[T]) -> Self {
        let mut m = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                m.a[i][j] = signs[i] * signs[j] * self.a[perm[i]][perm[j]];
            }
        }
        m
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let mut m = Tensor::<U>::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                m.a[i][j] = U::lit(self.a[i][j].to_f64_lossy());
            }
        }
        m
    }
}

impl<T: Real> Add for Tensor<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.zip_map(&rhs, |a, b| a + b)
    }
}

impl<T: Real> Sub for Tensor<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.zip_map(&rhs, |a, b| a - b)
    }
}

impl<T: Real> Mul for Tensor<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        assert_eq!(self.d, rhs.d, "tensor dimension mismatch");
        let mut m = Self::zeros(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                let mut s = T::zero();
                for k in 0..self.d {
                    s = s + self.a[i][k] * rhs.a[k][j];
                }
                m.a[i][j] = s;
            }
        }
        m
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.rows()).finish()
    }
}

impl<T: Real> fmt::Display for Tensor<T> {
    /// Row-major CSV fragment, 17 significant digits, rows separated by `;`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.d {
            if i > 0 {
                write!(f, ";")?;
            }
            for j in 0..self.d {
                if j > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{:.16e}", self.a[i][j])?;
            }
        }
        Ok(())
    }
}

impl<T: Real + Serialize> Serialize for Tensor<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de, T: Real + Deserialize<'de>> Deserialize<'de> for Tensor<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<T>>::deserialize(d)?;
        Tensor::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
