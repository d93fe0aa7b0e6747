//! Two-valued coefficient fields on a regular periodic grid.
//!
//! Cell `i = (i_0, …, i_{d-1})` covers `[i h, (i + 1) h)` with `h = L / N`
//! and is stored at flat index `((i_0 N + i_1) N + i_2)` (axis 0 slowest).
//! A cell belongs to the inclusion phase iff its center lies in some open
//! unit ball around a point of the sample.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::point_process::{PointSample, TorusSpec};
use crate::scalar::{of_usize, Real};
use crate::single_inclusion::PhaseModel;
use crate::tensor::Tensor;

/// Smallest admissible cells per side.
pub const MIN_CELLS: usize = 64;
/// Largest admissible cell width (eight cells per inclusion diameter).
pub const MAX_CELL_WIDTH: f64 = 0.25;
/// Upper bound on `N^d`.
pub const MAX_TOTAL_CELLS: usize = 1 << 28;

const FIELD_MAGIC: &[u8; 4] = b"DHGF";
const GRADIENT_MAGIC: &[u8; 4] = b"DHGG";
const FORMAT_VERSION: u32 = 1;

/// Row-major multi-index to flat index (axis 0 slowest).
pub fn flat_index(idx: &[usize], n: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * n + i)
}

/// Flat index to multi-index.
pub fn multi_index(mut flat: usize, n: usize, d: usize) -> [usize; 3] {
    let mut idx = [0usize; 3];
    for k in (0..d).rev() {
        idx[k] = flat % n;
        flat /= n;
    }
    idx
}

/// Calls `f(flat)` for every cell whose center lies in the open unit ball
/// around `c` (torus metric). Cells may be visited in any order.
pub fn for_each_cell_in_ball<T: Real>(
    torus: &TorusSpec<T>,
    n: usize,
    c: &[T],
    mut f: impl FnMut(usize),
) {
    let d = torus.d;
    let h = torus.side / of_usize::<T>(n);
    let half = T::lit(0.5);
    // Cell k has center (k + 1/2) h; candidates satisfy |(k + 1/2) h - c| < 1.
    let mut lo = [0isize; 3];
    let mut span = [0usize; 3];
    for k in 0..d {
        let a = Float::ceil((c[k] - T::one()) / h - half).to_f64_lossy() as isize;
        let b = Float::floor((c[k] + T::one()) / h - half).to_f64_lossy() as isize;
        lo[k] = a;
        span[k] = ((b - a + 1).max(0) as usize).min(n);
    }
    let count: usize = span[..d].iter().product();
    let nn = n as isize;
    for m in 0..count {
        let mut rem = m;
        let mut r2 = T::zero();
        let mut flat = 0usize;
        for k in 0..d {
            let off = rem % span[k];
            rem /= span[k];
            let kk = lo[k] + off as isize;
            let x = (T::lit(kk as f64) + half) * h - c[k];
            r2 = r2 + x * x;
            flat = flat * n + kk.rem_euclid(nn) as usize;
        }
        if r2 < T::one() {
            f(flat);
        }
    }
}

/// Indicator (`0` matrix, `1` inclusion) of the union of unit balls at cell centers.
pub fn inclusion_mask<T: Real>(sample: &PointSample<T>, n: usize) -> Vec<u8> {
    let d = sample.dim();
    let mut mask = vec![0u8; n.pow(d as u32)];
    for c in sample.centers() {
        for_each_cell_in_ball(&sample.torus, n, c, |i| mask[i] = 1);
    }
    mask
}

/// Rasterized coefficient field: a phase index per cell plus the two conductivities.
#[derive(Clone, PartialEq)]
pub struct GridField<T> {
    pub torus: TorusSpec<T>,
    n: usize,
    pub phases: PhaseModel<T>,
    mask: Vec<u8>,
}

impl<T: Real> std::fmt::Debug for GridField<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridField")
            .field("torus", &self.torus)
            .field("n", &self.n)
            .field("phases", &self.phases)
            .field("inclusion_cells", &self.mask.iter().filter(|&&m| m != 0).count())
            .finish()
    }
}

impl<T: Real> GridField<T> {
    /// Checks the resolution guard `N ≥ 64`, `L / N ≤ 1/4`.
    pub fn check_resolution(torus: &TorusSpec<T>, n: usize) -> Result<()> {
        torus.validate()?;
        if n < MIN_CELLS {
            return Err(Error::config("N", format!("need at least {MIN_CELLS} cells per side, got {n}")));
        }
        let h = torus.side / of_usize::<T>(n);
        if h > T::lit(MAX_CELL_WIDTH) {
            return Err(Error::config(
                "N",
                format!("cell width L/N = {h} exceeds {MAX_CELL_WIDTH}"),
            ));
        }
        match n.checked_pow(torus.d as u32) {
            Some(total) if total <= MAX_TOTAL_CELLS => Ok(()),
            _ => Err(Error::Resource(format!(
                "grid of {n}^{} cells exceeds {MAX_TOTAL_CELLS}",
                torus.d
            ))),
        }
    }

    /// Cell-center rasterization of the inclusions of `sample`.
    pub fn rasterize(sample: &PointSample<T>, phases: PhaseModel<T>, n: usize) -> Result<Self> {
        Self::check_resolution(&sample.torus, n)?;
        check_dims(&sample.torus, &phases)?;
        Ok(Self {
            torus: sample.torus,
            n,
            phases,
            mask: inclusion_mask(sample, n),
        })
    }

    /// Field from an explicit phase mask.
    pub fn from_mask(
        torus: TorusSpec<T>,
        n: usize,
        phases: PhaseModel<T>,
        mask: Vec<u8>,
    ) -> Result<Self> {
        Self::check_resolution(&torus, n)?;
        check_dims(&torus, &phases)?;
        if mask.len() != n.pow(torus.d as u32) {
            return Err(Error::config(
                "mask",
                format!("expected {} cells, got {}", n.pow(torus.d as u32), mask.len()),
            ));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::config("mask", "phase indices must be 0 or 1"));
        }
        Ok(Self {
            torus,
            n,
            phases,
            mask,
        })
    }

    /// Homogeneous matrix phase everywhere.
    pub fn homogeneous(torus: TorusSpec<T>, n: usize, phases: PhaseModel<T>) -> Result<Self> {
        let cells = n.checked_pow(torus.d as u32).unwrap_or(usize::MAX);
        Self::check_resolution(&torus, n)?;
        Self::from_mask(torus, n, phases, vec![0; cells])
    }

    /// Stripes normal to `axis`: cell `i` is inclusion phase iff
    /// `i_axis mod period < width` (all counts in cells).
    pub fn laminate(
        torus: TorusSpec<T>,
        n: usize,
        phases: PhaseModel<T>,
        axis: usize,
        period: usize,
        width: usize,
    ) -> Result<Self> {
        Self::check_resolution(&torus, n)?;
        if axis >= torus.d {
            return Err(Error::config("axis", format!("must be < d = {}", torus.d)));
        }
        if period == 0 || n % period != 0 || width > period {
            return Err(Error::config(
                "period",
                format!("period must divide N = {n} and width <= period (period {period}, width {width})"),
            ));
        }
        let d = torus.d;
        let mask = (0..n.pow(d as u32))
            .map(|f| u8::from(multi_index(f, n, d)[axis] % period < width))
            .collect();
        Self::from_mask(torus, n, phases, mask)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.torus.d
    }

    pub fn cells(&self) -> usize {
        self.mask.len()
    }

    pub fn cell_width(&self) -> T {
        self.torus.side / of_usize::<T>(self.n)
    }

    pub fn mask(&self) -> &[u8] {
        &self.mask
    }

    pub fn conductivity(&self, flat: usize) -> &Tensor<T> {
        self.phases.phase(self.mask[flat])
    }

    /// Fraction of cells in the inclusion phase.
    pub fn volume_fraction(&self) -> T {
        let count = self.mask.iter().filter(|&&m| m != 0).count();
        of_usize::<T>(count) / of_usize::<T>(self.mask.len())
    }

    /// Same field with the phases replaced.
    pub fn with_phases(&self, phases: PhaseModel<T>) -> Result<Self> {
        check_dims(&self.torus, &phases)?;
        Ok(Self {
            phases,
            ..self.clone()
        })
    }

    /// Field transformed by the grid symmetry `x_k ↦ s_k x_{perm[k]}` about
    /// node 0, with conductivities conjugated accordingly.
    ///
    /// Cell `j` of the new field takes the phase of cell `i` where
    /// `i_{perm[k]} = j_k` if `s_k = +1` and `N - 1 - j_k` otherwise.
    pub fn transformed(&self, perm: &[usize], flips: &[bool]) -> Result<Self> {
        let d = self.dim();
        let n = self.n;
        let signs: Vec<T> = flips.iter().map(|&f| if f { -T::one() } else { T::one() }).collect();
        let mut mask = vec![0u8; self.mask.len()];
        for (j, m) in mask.iter_mut().enumerate() {
            let jj = multi_index(j, n, d);
            let mut ii = [0usize; 3];
            for k in 0..d {
                ii[perm[k]] = if flips[k] { n - 1 - jj[k] } else { jj[k] };
            }
            *m = self.mask[flat_index(&ii[..d], n)];
        }
        let a1 = self.phases.a1().conjugate_signed_permutation(perm, &signs);
        let a2 = self.phases.a2().conjugate_signed_permutation(perm, &signs);
        Self::from_mask(self.torus, n, PhaseModel::new(a1, a2)?, mask)
    }

    /// Binary dump: magic `DHGF`, version, `d`, `N` (u32), `L` (f64),
    /// `A1` and `A2` row-major (f64), then one phase byte per cell.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, FIELD_MAGIC, self)?;
        w.write_all(&self.mask)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let (torus, n, phases) = read_header(&mut r, FIELD_MAGIC)?;
        let mut mask = vec![0u8; n.pow(torus.d as u32)];
        r.read_exact(&mut mask)?;
        Self::from_mask(torus, n, phases, mask)
    }

    /// Binary dump of a vector field on this grid: same header with magic
    /// `DHGG`, then `d` f64 components per cell (cell-major).
    pub fn write_vector_field<W: Write>(&self, mut w: W, components: &[Vec<T>]) -> Result<()> {
        if components.len() != self.dim() || components.iter().any(|c| c.len() != self.cells()) {
            return Err(Error::config("gradient", "vector field does not match the grid"));
        }
        write_header(&mut w, GRADIENT_MAGIC, self)?;
        for i in 0..self.cells() {
            for c in components {
                w.write_f64::<LittleEndian>(c[i].to_f64_lossy())?;
            }
        }
        Ok(())
    }

    /// Reads a vector-field dump; returns the grid header fields and the components.
    pub fn read_vector_field<R: Read>(mut r: R) -> Result<(TorusSpec<T>, usize, PhaseModel<T>, Vec<Vec<T>>)> {
        let (torus, n, phases) = read_header(&mut r, GRADIENT_MAGIC)?;
        let cells = n.pow(torus.d as u32);
        let mut comps = vec![vec![T::zero(); cells]; torus.d];
        for i in 0..cells {
            for c in comps.iter_mut() {
                c[i] = T::lit(r.read_f64::<LittleEndian>()?);
            }
        }
        Ok((torus, n, phases, comps))
    }
}

fn check_dims<T: Real>(torus: &TorusSpec<T>, phases: &PhaseModel<T>) -> Result<()> {
    if phases.dim() != torus.d {
        return Err(Error::config(
            "phases",
            format!("conductivities are {0}x{0} but the torus has d = {1}", phases.dim(), torus.d),
        ));
    }
    Ok(())
}

fn write_header<T: Real, W: Write>(w: &mut W, magic: &[u8; 4], f: &GridField<T>) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(f.dim() as u32)?;
    w.write_u32::<LittleEndian>(f.n as u32)?;
    w.write_f64::<LittleEndian>(f.torus.side.to_f64_lossy())?;
    for a in [f.phases.a1(), f.phases.a2()] {
        for v in a.to_row_major() {
            w.write_f64::<LittleEndian>(v.to_f64_lossy())?;
        }
    }
    Ok(())
}

fn read_header<T: Real, R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<(TorusSpec<T>, usize, PhaseModel<T>)> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Parse {
            line: 0,
            message: format!("bad magic {:?}, expected {:?}", m, magic),
        });
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 0,
            message: format!("unsupported format version {version}"),
        });
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let side = T::lit(r.read_f64::<LittleEndian>()?);
    let torus = TorusSpec::new(d, side)?;
    GridField::check_resolution(&torus, n)?;
    let mut read_tensor = || -> Result<Tensor<T>> {
        let mut rows = vec![vec![T::zero(); d]; d];
        for row in rows.iter_mut() {
            for v in row.iter_mut() {
                *v = T::lit(r.read_f64::<LittleEndian>()?);
            }
        }
        Tensor::from_rows(&rows)
    };
    let a1 = read_tensor()?;
    let a2 = read_tensor()?;
    Ok((torus, n, PhaseModel::new(a1, a2)?))
}
