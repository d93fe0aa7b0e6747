//! Discrete Green projection on a periodic `N^d` grid.
//!
//! The potential lives on grid nodes and its gradient on cells, each cell
//! gradient component being the edge difference averaged over the `2^{d-1}`
//! parallel cell edges (the rotated scheme). In Fourier space this gradient
//! has the symbol
//!
//! ```text
//! ξ_k(q) = (2i/h) e^{iΣθ} sin θ_k Π_{l≠k} cos θ_l,    θ_l = π q_l / N.
//! ```
//!
//! The common complex factor cancels in the orthogonal projection onto
//! zero-mean discrete gradients, `P σ̂ = ξ (ξ·σ̂) / |ξ|²`, so only the real
//! part `sin θ_k Π cos θ_l` is kept. `P` vanishes at `q = 0` and wherever `ξ`
//! does (the checkerboard modes), and is exact for grid-aligned laminates.
//!
//! Two real components share one complex transform. The d-dimensional FFT
//! transforms the contiguous last axis and moves it to the front by a
//! rectangular transpose; after `d - 1` such steps the spectrum is stored
//! with axis order `(1, 2, …, d-1, 0)`, which the projection reads directly.
//! All reductions and transforms are independent of the worker count.

use std::sync::Arc;

use num_traits::{Float, Zero};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::microstructure::GridField;
use crate::scalar::{of_usize, Real};

/// Fixed chunk length for parallel loops and ordered reductions.
pub(crate) const CHUNK: usize = 1 << 12;

/// Sum of `f(i)` over `0..len` with a reduction tree that does not depend on
/// the number of workers.
pub(crate) fn ordered_sum<T: Real>(len: usize, f: impl Fn(usize) -> T + Sync) -> T {
    let chunks = len.div_ceil(CHUNK);
    let partials: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let end = ((c + 1) * CHUNK).min(len);
            let mut s = T::zero();
            for i in c * CHUNK..end {
                s = s + f(i);
            }
            s
        })
        .collect();
    partials.into_iter().fold(T::zero(), |a, b| a + b)
}

fn transpose<C: Copy + Send + Sync>(src: &[C], rows: usize, cols: usize, dst: &mut [C]) {
    const B: usize = 32;
    dst.par_chunks_mut(rows * B).enumerate().for_each(|(cb, chunk)| {
        let c0 = cb * B;
        let cn = chunk.len() / rows;
        for r0 in (0..rows).step_by(B) {
            let rn = (rows - r0).min(B);
            for c in 0..cn {
                let out = &mut chunk[c * rows + r0..c * rows + r0 + rn];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = src[(r0 + k) * cols + c0 + c];
                }
            }
        }
    });
}

/// Reusable transforms, symbol tables and work buffers for one grid shape.
pub struct GreenProjector<T: Real> {
    d: usize,
    n: usize,
    cells: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    sin: Vec<T>,
    cos: Vec<T>,
    bufs: Vec<Vec<Complex<T>>>,
    outs: Vec<Vec<Complex<T>>>,
    tmp: Vec<Complex<T>>,
}

impl<T: Real> GreenProjector<T> {
    pub fn new(d: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let cells = n.pow(d as u32);
        let (mut sin, mut cos) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for q in 0..n {
            // Exact values where the trigonometric functions vanish or are ±1.
            let (s, c) = if q == 0 {
                (T::zero(), T::one())
            } else if 2 * q == n {
                (T::one(), T::zero())
            } else {
                let th = T::PI() * of_usize::<T>(q) / of_usize::<T>(n);
                (Float::sin(th), Float::cos(th))
            };
            sin.push(s);
            cos.push(c);
        }
        let nb = d.div_ceil(2);
        let zero = Complex::zero();
        Self {
            d,
            n,
            cells,
            fwd,
            inv,
            sin,
            cos,
            bufs: vec![vec![zero; cells]; nb],
            outs: vec![vec![zero; cells]; nb],
            tmp: vec![zero; cells],
        }
    }

    pub fn for_field(field: &GridField<T>) -> Self {
        Self::new(field.dim(), field.n())
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    fn fft_lines(fft: &Arc<dyn Fft<T>>, buf: &mut [Complex<T>], n: usize) {
        let lines_per_task = (CHUNK * 4 / n).max(1);
        buf.par_chunks_mut(n * lines_per_task).for_each(|chunk| {
            let mut scratch = vec![Complex::zero(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
    }

    fn forward(fft: &Arc<dyn Fft<T>>, buf: &mut Vec<Complex<T>>, tmp: &mut Vec<Complex<T>>, d: usize, n: usize) {
        let rest = buf.len() / n;
        for step in 0..d {
            Self::fft_lines(fft, buf, n);
            if step + 1 < d {
                // (rest × n) → (n × rest): last axis moves to the front.
                transpose(buf, rest, n, tmp);
                std::mem::swap(buf, tmp);
            }
        }
    }

    fn inverse(fft: &Arc<dyn Fft<T>>, buf: &mut Vec<Complex<T>>, tmp: &mut Vec<Complex<T>>, d: usize, n: usize) {
        let rest = buf.len() / n;
        for step in 0..d {
            if step > 0 {
                // (n × rest) → (rest × n): first axis moves to the back.
                transpose(buf, n, rest, tmp);
                std::mem::swap(buf, tmp);
            }
            Self::fft_lines(fft, buf, n);
        }
    }

    /// Real projection symbol at spectral position `p` and the flat index of `-q`.
    #[inline]
    fn symbol(&self, p: usize, xi: &mut [T; 3]) -> usize {
        let (d, n) = (self.d, self.n);
        // Spectral digits, most significant first, are axes 1, 2, …, d-1, 0.
        let mut q = [0usize; 3];
        let mut rem = p;
        for j in (0..d).rev() {
            q[(j + 1) % d] = rem % n;
            rem /= n;
        }
        let mut neg = 0usize;
        for j in 0..d {
            let ax = (j + 1) % d;
            neg = neg * n + (n - q[ax]) % n;
        }
        for k in 0..d {
            let mut v = self.sin[q[k]];
            for l in 0..d {
                if l != k {
                    v = v * self.cos[q[l]];
                }
            }
            xi[k] = v;
        }
        neg
    }

    /// `y = P(A x)` for the conductivity field of `field`; returns the mean
    /// flux `⟨A x⟩` read off the zero mode.
    pub fn apply(&mut self, field: &GridField<T>, x: &[Vec<T>], y: &mut [Vec<T>]) -> Vec<T> {
        let d = self.d;
        debug_assert_eq!(field.dim(), d);
        debug_assert_eq!(field.cells(), self.cells);
        let a = [field.phases.a1().rows(), field.phases.a2().rows()];
        let mask = field.mask();

        // Pack σ = A x, two components per complex buffer.
        for (b, buf) in self.bufs.iter_mut().enumerate() {
            let c0 = 2 * b;
            let has_im = c0 + 1 < d;
            buf.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
                let base = ci * CHUNK;
                for (o, z) in chunk.iter_mut().enumerate() {
                    let i = base + o;
                    let m = &a[mask[i] as usize];
                    let flux = |row: usize| {
                        let mut s = T::zero();
                        for (k, xk) in x.iter().enumerate() {
                            s = s + m[row][k] * xk[i];
                        }
                        s
                    };
                    let re = flux(c0);
                    let im = if has_im { flux(c0 + 1) } else { T::zero() };
                    *z = Complex::new(re, im);
                }
            });
        }
        let fwd = Arc::clone(&self.fwd);
        for buf in self.bufs.iter_mut() {
            Self::forward(&fwd, buf, &mut self.tmp, d, self.n);
        }

        let inv_cells = T::one() / of_usize::<T>(self.cells);
        let mut mean = vec![T::zero(); d];
        for (b, buf) in self.bufs.iter().enumerate() {
            mean[2 * b] = buf[0].re * inv_cells;
            if 2 * b + 1 < d {
                mean[2 * b + 1] = buf[0].im * inv_cells;
            }
        }

        // Project. Outputs are written out of place because unpacking reads `-q`.
        let mut outs = std::mem::take(&mut self.outs);
        let this = &*self;
        let project = |start: usize, outs: &mut [&mut [Complex<T>]]| {
            let half = T::lit(0.5);
            let len = outs[0].len();
            let mut xi = [T::zero(); 3];
            let mut g = [Complex::<T>::zero(); 3];
            for o in 0..len {
                let p = start + o;
                let pm = this.symbol(p, &mut xi);
                let norm2 = xi[..d].iter().fold(T::zero(), |s, &v| s + v * v);
                if norm2 <= T::lit(1e-24) {
                    for out in outs.iter_mut() {
                        out[o] = Complex::zero();
                    }
                    continue;
                }
                for (b, buf) in this.bufs.iter().enumerate() {
                    let z = buf[p];
                    if 2 * b + 1 < d {
                        let zm = buf[pm].conj();
                        g[2 * b] = (z + zm) * half;
                        // (z - zm) / 2i
                        let w = (z - zm) * half;
                        g[2 * b + 1] = Complex::new(w.im, -w.re);
                    } else {
                        g[2 * b] = z;
                    }
                }
                let mut s = Complex::<T>::zero();
                for k in 0..d {
                    s = s + g[k] * xi[k];
                }
                let s = s * (inv_cells / norm2);
                for (b, out) in outs.iter_mut().enumerate() {
                    let h0 = s * xi[2 * b];
                    out[o] = if 2 * b + 1 < d {
                        let h1 = s * xi[2 * b + 1];
                        // h0 + i h1
                        Complex::new(h0.re - h1.im, h0.im + h1.re)
                    } else {
                        h0
                    };
                }
            }
        };
        match outs.as_mut_slice() {
            [o0] => o0.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, c)| {
                project(ci * CHUNK, &mut [c]);
            }),
            [o0, o1] => o0
                .par_chunks_mut(CHUNK)
                .zip(o1.par_chunks_mut(CHUNK))
                .enumerate()
                .for_each(|(ci, (c0, c1))| project(ci * CHUNK, &mut [c0, c1])),
            _ => unreachable!("at most two packed buffers for d <= 3"),
        }
        self.outs = outs;

        let inv = Arc::clone(&self.inv);
        for out in self.outs.iter_mut() {
            Self::inverse(&inv, out, &mut self.tmp, d, self.n);
        }
        for (b, out) in self.outs.iter().enumerate() {
            let c0 = 2 * b;
            if c0 + 1 < d {
                let (lo, hi) = y.split_at_mut(c0 + 1);
                let (y0, y1) = (&mut lo[c0], &mut hi[0]);
                y0.par_chunks_mut(CHUNK)
                    .zip(y1.par_chunks_mut(CHUNK))
                    .zip(out.par_chunks(CHUNK))
                    .for_each(|((a0, a1), z)| {
                        for ((u, v), w) in a0.iter_mut().zip(a1.iter_mut()).zip(z) {
                            *u = w.re;
                            *v = w.im;
                        }
                    });
            } else {
                y[c0].par_chunks_mut(CHUNK)
                    .zip(out.par_chunks(CHUNK))
                    .for_each(|(a0, z)| {
                        for (u, w) in a0.iter_mut().zip(z) {
                            *u = w.re;
                        }
                    });
            }
        }
        mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::TorusSpec;
    use crate::single_inclusion::PhaseModel;

    fn homogeneous(d: usize, n: usize) -> GridField<f64> {
        let t = TorusSpec::new(d, n as f64 / 4.0).unwrap();
        GridField::homogeneous(t, n, PhaseModel::isotropic(1.0, 1.0, d).unwrap()).unwrap()
    }

    /// Nodal potential → cell gradient, by direct edge averaging.
    fn discrete_gradient(phi: &[f64], d: usize, n: usize, h: f64) -> Vec<Vec<f64>> {
        let cells = n.pow(d as u32);
        let idx = |v: [usize; 3]| {
            let mut f = 0;
            for &x in &v[..d] {
                f = f * n + x % n;
            }
            f
        };
        let mut g = vec![vec![0.0; cells]; d];
        for c in 0..cells {
            let base = crate::microstructure::raster::multi_index(c, n, d);
            for k in 0..d {
                let mut acc = 0.0;
                let corners = 1usize << (d - 1);
                for m in 0..corners {
                    let mut v = base;
                    let mut bit = 0;
                    for l in 0..d {
                        if l != k {
                            v[l] += (m >> bit) & 1;
                            bit += 1;
                        }
                    }
                    let mut hi = v;
                    hi[k] += 1;
                    acc += phi[idx(hi)] - phi[idx(v)];
                }
                g[k][c] = acc / (corners as f64 * h);
            }
        }
        g
    }

    #[test]
    fn projection_fixes_discrete_gradients_and_kills_constants() {
        for d in [2usize, 3] {
            let n = 64;
            let field = homogeneous(d, n);
            let cells = field.cells();
            let mut state = 12345u64;
            let mut rnd = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
            };
            let phi: Vec<f64> = (0..cells).map(|_| rnd()).collect();
            let mut g = discrete_gradient(&phi, d, n, field.cell_width());
            for comp in g.iter_mut() {
                for v in comp.iter_mut() {
                    *v += 0.75;
                }
            }
            let mut proj = GreenProjector::for_field(&field);
            let mut y = vec![vec![0.0; cells]; d];
            let mean = proj.apply(&field, &g, &mut y);
            for k in 0..d {
                assert!((mean[k] - 0.75).abs() < 1e-12);
                for c in 0..cells {
                    let expect = g[k][c] - 0.75;
                    assert!((y[k][c] - expect).abs() < 1e-10, "d={d} k={k} c={c}");
                }
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_self_adjoint() {
        let d = 3;
        let n = 64;
        let field = homogeneous(d, n);
        let cells = field.cells();
        let f1: Vec<Vec<f64>> = (0..d)
            .map(|k| (0..cells).map(|i| ((i * (k + 3)) % 17) as f64 - 8.0).collect())
            .collect();
        let f2: Vec<Vec<f64>> = (0..d)
            .map(|k| (0..cells).map(|i| ((i * (k + 5) + 3) % 13) as f64).collect())
            .collect();
        let mut proj = GreenProjector::for_field(&field);
        let mut p1 = vec![vec![0.0; cells]; d];
        let mut p2 = vec![vec![0.0; cells]; d];
        let mut pp1 = vec![vec![0.0; cells]; d];
        proj.apply(&field, &f1, &mut p1);
        proj.apply(&field, &f2, &mut p2);
        proj.apply(&field, &p1, &mut pp1);
        let dot = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            a.iter().zip(b).map(|(u, v)| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>()).sum()
        };
        for k in 0..d {
            for i in 0..cells {
                assert!((pp1[k][i] - p1[k][i]).abs() < 1e-10);
            }
        }
        let (a, b) = (dot(&p1, &f2), dot(&f1, &p2));
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
}
