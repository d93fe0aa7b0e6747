//! Periodic cell lists for radius queries on point samples.

use num_traits::Float;

use crate::point_process::PointSample;
use crate::scalar::{of_usize, Real};

/// Bucket grid over the torus with cells of side `>= min_side`.
pub struct CellList<T> {
    d: usize,
    ncell: usize,
    cell_side: T,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<T: Real> CellList<T> {
    pub fn new(sample: &PointSample<T>, min_side: T) -> Self {
        let d = sample.dim();
        let side = sample.torus.side;
        let mut ncell = if min_side > T::zero() {
            Float::floor(side / min_side).to_f64_lossy().max(1.0) as usize
        } else {
            1
        };
        // Keep the bucket count proportional to the point count.
        let cap = (4 * sample.len()).max(27);
        while ncell > 1 && ncell.pow(d as u32) > cap {
            ncell -= 1;
        }
        let cell_side = side / of_usize::<T>(ncell);
        let total = ncell.pow(d as u32);
        let mut counts = vec![0usize; total + 1];
        let cell_ids: Vec<usize> = sample
            .centers()
            .map(|c| flat_cell(c, cell_side, ncell))
            .collect();
        for &c in &cell_ids {
            counts[c + 1] += 1;
        }
        for k in 0..total {
            counts[k + 1] += counts[k];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; cell_ids.len()];
        for (i, &c) in cell_ids.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            d,
            ncell,
            cell_side,
            starts,
            items,
        }
    }

    fn bucket(&self, cell: usize) -> &[usize] {
        &self.items[self.starts[cell]..self.starts[cell + 1]]
    }

    fn unflatten(&self, mut cell: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for k in 0..self.d {
            idx[k] = cell % self.ncell;
            cell /= self.ncell;
        }
        idx
    }

    fn flatten(&self, idx: &[isize; 3]) -> usize {
        let n = self.ncell as isize;
        let mut flat = 0usize;
        for k in (0..self.d).rev() {
            flat = flat * self.ncell + idx[k].rem_euclid(n) as usize;
        }
        flat
    }

    fn neighbor_offsets(&self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        let count = 3usize.pow(self.d as u32);
        for m in 0..count {
            let mut o = [0isize; 3];
            let mut r = m;
            for k in 0..self.d {
                o[k] = (r % 3) as isize - 1;
                r /= 3;
            }
            out.push(o);
        }
        out
    }

    /// Calls `f(i, j, disp, dist2)` once for every unordered pair `i < j` with
    /// Euclidean torus distance `< r`, where `disp` is the minimum-image
    /// displacement `x_j - x_i`. Requires `r <= cell side`, otherwise the
    /// scan falls back to all pairs.
    pub fn for_each_pair_within<F>(&self, sample: &PointSample<T>, r: T, mut f: F)
    where
        F: FnMut(usize, usize, &[T], T),
    {
        let torus = sample.torus;
        let d = self.d;
        let r2 = r * r;
        let mut disp = [T::zero(); 3];
        let mut visit = |i: usize, j: usize| {
            let (a, b) = (sample.center(i), sample.center(j));
            let mut s = T::zero();
            for k in 0..d {
                disp[k] = torus.wrap_delta(b[k] - a[k]);
                s = s + disp[k] * disp[k];
            }
            if s < r2 {
                f(i, j, &disp[..d], s);
            }
        };
        if self.ncell < 3 || r > self.cell_side {
            let n = sample.len();
            for i in 0..n {
                for j in (i + 1)..n {
                    visit(i, j);
                }
            }
            return;
        }
        let offsets = self.neighbor_offsets();
        let total = self.ncell.pow(d as u32);
        for cell in 0..total {
            let base = self.unflatten(cell);
            for o in &offsets {
                let mut idx = [0isize; 3];
                for k in 0..d {
                    idx[k] = base[k] as isize + o[k];
                }
                let other = self.flatten(&idx);
                for &i in self.bucket(cell) {
                    for &j in self.bucket(other) {
                        if i < j {
                            visit(i, j);
                        }
                    }
                }
            }
        }
    }

    /// True if some center lies at Euclidean torus distance `< r` from `x`.
    pub fn any_within(&self, sample: &PointSample<T>, x: &[T], r: T) -> bool {
        let torus = sample.torus;
        let r2 = r * r;
        if self.ncell < 3 || r > self.cell_side {
            return sample.centers().any(|c| torus.dist2(c, x) < r2);
        }
        let home = cell_index(x, self.cell_side, self.ncell);
        for o in self.neighbor_offsets() {
            let mut idx = [0isize; 3];
            for k in 0..self.d {
                idx[k] = home[k] as isize + o[k];
            }
            for &i in self.bucket(self.flatten(&idx)) {
                if torus.dist2(sample.center(i), x) < r2 {
                    return true;
                }
            }
        }
        false
    }

    /// Euclidean torus distance from each center to its nearest other center
    /// (`+inf` when the sample has fewer than two points).
    pub fn nearest_neighbor_distances(&self, sample: &PointSample<T>) -> Vec<T> {
        let n = sample.len();
        let torus = sample.torus;
        let d = self.d;
        if n < 2 {
            return vec![T::infinity(); n];
        }
        let brute = |i: usize| {
            let mut best = T::infinity();
            for j in 0..n {
                if j != i {
                    best = Float::min(best, torus.dist2(sample.center(i), sample.center(j)));
                }
            }
            Float::sqrt(best)
        };
        if self.ncell < 3 {
            return (0..n).map(brute).collect();
        }
        (0..n)
            .map(|i| {
                let x = sample.center(i);
                let home = cell_index(x, self.cell_side, self.ncell);
                let mut best2 = T::infinity();
                let mut ring = 0usize;
                loop {
                    if 2 * ring + 1 >= self.ncell {
                        return brute(i);
                    }
                    for_each_ring_cell(d, ring, |o| {
                        let mut idx = [0isize; 3];
                        for k in 0..d {
                            idx[k] = home[k] as isize + o[k];
                        }
                        for &j in self.bucket(self.flatten(&idx)) {
                            if j != i {
                                best2 = Float::min(best2, torus.dist2(x, sample.center(j)));
                            }
                        }
                    });
                    // Cells beyond this ring are at least `ring * side` away.
                    let reach = of_usize::<T>(ring) * self.cell_side;
                    if best2 <= reach * reach {
                        return Float::sqrt(best2);
                    }
                    ring += 1;
                }
            })
            .collect()
    }
}

fn cell_index<T: Real>(x: &[T], cell_side: T, ncell: usize) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for (k, &c) in x.iter().enumerate() {
        let i = Float::floor(c / cell_side).to_f64_lossy() as isize;
        idx[k] = i.clamp(0, ncell as isize - 1) as usize;
    }
    idx
}

fn flat_cell<T: Real>(x: &[T], cell_side: T, ncell: usize) -> usize {
    let idx = cell_index(x, cell_side, ncell);
    let mut flat = 0;
    for k in (0..x.len()).rev() {
        flat = flat * ncell + idx[k];
    }
    flat
}

/// Offsets with Chebyshev norm exactly `ring`.
fn for_each_ring_cell(d: usize, ring: usize, mut f: impl FnMut(&[isize; 3])) {
    let r = ring as isize;
    let side = 2 * ring + 1;
    let count = side.pow(d as u32);
    for m in 0..count {
        let mut o = [0isize; 3];
        let mut rem = m;
        let mut on_ring = false;
        for k in 0..d {
            o[k] = (rem % side) as isize - r;
            rem /= side;
            on_ring |= o[k].abs() == r;
        }
        if on_ring {
            f(&o);
        }
    }
}
