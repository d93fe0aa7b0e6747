//! Stationary point processes sampled on a periodic torus `[0, L)^d`.
//!
//! Every sampler is a pure function of `(process, torus, seed)`: the seed keys
//! a ChaCha stream, so ensembles can be generated in any order or in parallel
//! and still reproduce bit for bit.

use std::io::{BufRead, Write};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{of_usize, Real};
use crate::spatial::CellList;

/// Largest expected point count a sampler will accept.
pub const MAX_EXPECTED_POINTS: f64 = 1e8;

/// Periodic box `[0, L)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusSpec<T> {
    pub d: usize,
    #[serde(rename = "L")]
    pub side: T,
}

impl<T: Real> TorusSpec<T> {
    /// Smallest admissible side: four inclusion diameters.
    pub fn min_side() -> T {
        T::lit(8.0)
    }

    pub fn new(d: usize, side: T) -> Result<Self> {
        let t = Self { d, side };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::config("d", format!("dimension must be 2 or 3, got {}", self.d)));
        }
        if !(self.side >= Self::min_side()) || !Float::is_finite(self.side) {
            return Err(Error::config(
                "L",
                format!("torus side must be finite and >= 8, got {}", self.side),
            ));
        }
        Ok(())
    }

    pub fn volume(&self) -> T {
        Float::powi(self.side, self.d as i32)
    }

    /// Minimum-image representative of a coordinate difference, in `[-L/2, L/2]`.
    #[inline]
    pub fn wrap_delta(&self, dx: T) -> T {
        dx - self.side * Float::round(dx / self.side)
    }

    /// Maps a coordinate into `[0, L)`.
    #[inline]
    pub fn wrap_coord(&self, x: T) -> T {
        let mut y = x - self.side * Float::floor(x / self.side);
        if y >= self.side {
            y = y - self.side;
        }
        if y < T::zero() {
            y = T::zero();
        }
        y
    }

    /// Squared Euclidean torus distance.
    #[inline]
    pub fn dist2(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
            let dx = self.wrap_delta(y - x);
            acc + dx * dx
        })
    }

    /// Sup-norm torus distance.
    #[inline]
    pub fn dist_sup(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
            Float::max(acc, Float::abs(self.wrap_delta(y - x)))
        })
    }
}

/// Point process family with its parameters (lengths in inclusion radii).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessSpec<T> {
    Poisson { lambda: T },
    /// Matérn type II hardcore thinning of a Poisson parent process.
    #[serde(rename = "matern2")]
    MaternII { lambda_parent: T, r_hard: T },
    /// Cubic lattice of spacing `a` with i.i.d. uniform jitter in `[-eta, eta]^d`
    /// and a uniform random global shift.
    JitteredLattice { spacing: T, jitter: T },
}

impl<T: Real> ProcessSpec<T> {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: T| -> Result<()> {
            if v > T::zero() && Float::is_finite(v) {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be finite and > 0, got {v}")))
            }
        };
        match *self {
            ProcessSpec::Poisson { lambda } => pos("lambda", lambda),
            ProcessSpec::MaternII {
                lambda_parent,
                r_hard,
            } => {
                pos("lambda_parent", lambda_parent)?;
                pos("r_hard", r_hard)
            }
            ProcessSpec::JitteredLattice { spacing, jitter } => {
                pos("spacing", spacing)?;
                if !(jitter >= T::zero() && jitter < spacing / T::lit(2.0)) {
                    return Err(Error::config(
                        "jitter",
                        format!("must satisfy 0 <= jitter < spacing/2, got {jitter}"),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ProcessSpec::Poisson { .. } => "poisson",
            ProcessSpec::MaternII { .. } => "matern2",
            ProcessSpec::JitteredLattice { .. } => "jittered_lattice",
        }
    }

    fn params(&self) -> Vec<T> {
        match *self {
            ProcessSpec::Poisson { lambda } => vec![lambda],
            ProcessSpec::MaternII {
                lambda_parent,
                r_hard,
            } => vec![lambda_parent, r_hard],
            ProcessSpec::JitteredLattice { spacing, jitter } => vec![spacing, jitter],
        }
    }

    fn from_kind(kind: &str, params: &[T]) -> Option<Self> {
        match (kind, params) {
            ("poisson", [lambda]) => Some(ProcessSpec::Poisson { lambda: *lambda }),
            ("matern2", [lambda_parent, r_hard]) => Some(ProcessSpec::MaternII {
                lambda_parent: *lambda_parent,
                r_hard: *r_hard,
            }),
            ("jittered_lattice", [spacing, jitter]) => Some(ProcessSpec::JitteredLattice {
                spacing: *spacing,
                jitter: *jitter,
            }),
            _ => None,
        }
    }

    /// Mean number of points per unit volume.
    pub fn intensity(&self, d: usize) -> T {
        match *self {
            ProcessSpec::Poisson { lambda } => lambda,
            ProcessSpec::MaternII {
                lambda_parent,
                r_hard,
            } => matern2_intensity(lambda_parent, r_hard, d),
            ProcessSpec::JitteredLattice { spacing, .. } => {
                T::one() / Float::powi(spacing, d as i32)
            }
        }
    }

    /// Draws one sample on `torus` from `seed`.
    pub fn sample(&self, torus: &TorusSpec<T>, seed: u64) -> Result<PointSample<T>> {
        match *self {
            ProcessSpec::Poisson { lambda } => sample_poisson(lambda, torus, seed),
            ProcessSpec::MaternII {
                lambda_parent,
                r_hard,
            } => sample_matern2(lambda_parent, r_hard, torus, seed),
            ProcessSpec::JitteredLattice { spacing, jitter } => {
                sample_jittered_lattice(spacing, jitter, torus, seed)
            }
        }
    }
}

/// Volume of the Euclidean ball of radius `r` in dimension `d`.
pub fn ball_volume<T: Real>(r: T, d: usize) -> T {
    let pi = T::PI();
    let unit = match d {
        1 => T::lit(2.0),
        2 => pi,
        3 => T::lit(4.0) / T::lit(3.0) * pi,
        _ => {
            // Γ-function recursion: V_d = 2π/d · V_{d-2}
            let mut v = if d % 2 == 0 { T::one() } else { T::lit(2.0) };
            let mut k = if d % 2 == 0 { 2 } else { 3 };
            while k <= d {
                v = v * T::lit(2.0) * pi / of_usize::<T>(k);
                k += 2;
            }
            v
        }
    };
    unit * Float::powi(r, d as i32)
}

/// Retained intensity of Matérn II thinning: `(1 - exp(-λ_p V)) / V`.
pub fn matern2_intensity<T: Real>(lambda_parent: T, r_hard: T, d: usize) -> T {
    let v = ball_volume(r_hard, d);
    (T::one() - Float::exp(-lambda_parent * v)) / v
}

/// Finite point configuration on a torus, with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSample<T> {
    pub torus: TorusSpec<T>,
    pub process: ProcessSpec<T>,
    pub seed: u64,
    /// Flat coordinates, `d` per point, each in `[0, L)`.
    coords: Vec<T>,
}

impl<T: Real> PointSample<T> {
    /// Wraps explicit centers (coordinates are mapped into `[0, L)`).
    pub fn from_centers(
        torus: TorusSpec<T>,
        process: ProcessSpec<T>,
        seed: u64,
        centers: &[Vec<T>],
    ) -> Result<Self> {
        torus.validate()?;
        let mut coords = Vec::with_capacity(centers.len() * torus.d);
        for (i, c) in centers.iter().enumerate() {
            if c.len() != torus.d {
                return Err(Error::config(
                    "centers",
                    format!("center {i} has {} coordinates, expected {}", c.len(), torus.d),
                ));
            }
            coords.extend(c.iter().map(|&x| torus.wrap_coord(x)));
        }
        Ok(Self {
            torus,
            process,
            seed,
            coords,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.torus.d
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.torus.d
    }

    pub fn center(&self, i: usize) -> &[T] {
        let d = self.torus.d;
        &self.coords[i * d..(i + 1) * d]
    }

    pub fn centers(&self) -> impl Iterator<Item = &[T]> + '_ {
        self.coords.chunks_exact(self.torus.d)
    }

    pub fn coords(&self) -> &[T] {
        &self.coords
    }

    /// Empirical intensity `n / L^d`.
    pub fn empirical_intensity(&self) -> T {
        of_usize::<T>(self.len()) / self.torus.volume()
    }

    /// Same configuration shifted by `v` (mod L).
    pub fn translated(&self, v: &[T]) -> Self {
        let d = self.torus.d;
        let mut out = self.clone();
        for (k, x) in out.coords.iter_mut().enumerate() {
            *x = self.torus.wrap_coord(*x + v[k % d]);
        }
        out
    }

    /// Configuration with one extra center appended.
    pub fn with_point(&self, x: &[T]) -> Self {
        let mut out = self.clone();
        out.coords.extend(x.iter().map(|&c| self.torus.wrap_coord(c)));
        out
    }

    /// Every center moved to the nearest node of the grid with spacing `h`.
    ///
    /// `L / h` must be an integer; node coordinates are exact multiples of `h`.
    pub fn snapped_to_grid(&self, h: T) -> Self {
        let n = Float::round(self.torus.side / h);
        let mut out = self.clone();
        for x in out.coords.iter_mut() {
            let mut k = Float::round(*x / h);
            if k >= n {
                k = k - n;
            }
            *x = k * h;
        }
        out
    }

    /// Line-oriented text form: `# d L seed kind params...` then one center per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        write!(
            w,
            "# {} {} {} {}",
            self.torus.d,
            self.torus.side,
            self.seed,
            self.process.kind_name()
        )?;
        for p in self.process.params() {
            write!(w, " {p}")?;
        }
        writeln!(w)?;
        for c in self.centers() {
            let line: Vec<String> = c.iter().map(|x| format!("{:.16e}", x)).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii output")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
        let header = header?;
        let parse_err = |line: usize, message: String| Error::Parse { line, message };
        let fields: Vec<&str> = header
            .strip_prefix('#')
            .ok_or_else(|| parse_err(1, "header must start with '#'".into()))?
            .split_whitespace()
            .collect();
        if fields.len() < 4 {
            return Err(parse_err(1, "header needs d, L, seed and kind".into()));
        }
        let d: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(1, format!("bad dimension '{}'", fields[0])))?;
        let side = parse_real::<T>(fields[1]).ok_or_else(|| parse_err(1, "bad L".into()))?;
        let seed: u64 = fields[2]
            .parse()
            .map_err(|_| parse_err(1, format!("bad seed '{}'", fields[2])))?;
        let params = fields[4..]
            .iter()
            .map(|s| parse_real::<T>(s).ok_or_else(|| parse_err(1, format!("bad parameter '{s}'"))))
            .collect::<Result<Vec<T>>>()?;
        let process = ProcessSpec::from_kind(fields[3], &params)
            .ok_or_else(|| parse_err(1, format!("unknown process '{}'", fields[3])))?;
        let torus = TorusSpec::new(d, side)?;
        let mut coords = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<&str> = line.split_whitespace().collect();
            if vals.len() != d {
                return Err(parse_err(i + 1, format!("expected {d} coordinates")));
            }
            for v in vals {
                let x = parse_real::<T>(v)
                    .ok_or_else(|| parse_err(i + 1, format!("bad coordinate '{v}'")))?;
                if !(x >= T::zero() && x < side) {
                    return Err(parse_err(i + 1, format!("coordinate {v} outside [0, L)")));
                }
                coords.push(x);
            }
        }
        Ok(Self {
            torus,
            process,
            seed,
            coords,
        })
    }
}

fn parse_real<T: Real>(s: &str) -> Option<T> {
    s.parse::<f64>().ok().filter(|v| v.is_finite()).map(T::lit)
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn guard_expected(expected: f64) -> Result<()> {
    if expected > MAX_EXPECTED_POINTS {
        return Err(Error::Resource(format!(
            "expected point count {expected:.3e} exceeds {MAX_EXPECTED_POINTS:.0e}"
        )));
    }
    Ok(())
}

fn uniform_coord<T: Real>(rng: &mut ChaCha8Rng, torus: &TorusSpec<T>) -> T {
    let u: f64 = rng.random();
    torus.wrap_coord(T::lit(u * torus.side.to_f64_lossy()))
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> usize {
    Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(rng) as usize
}

/// Homogeneous Poisson process of intensity `lambda`.
pub fn sample_poisson<T: Real>(lambda: T, torus: &TorusSpec<T>, seed: u64) -> Result<PointSample<T>> {
    torus.validate()?;
    let process = ProcessSpec::Poisson { lambda };
    process.validate()?;
    let mean = (lambda * torus.volume()).to_f64_lossy();
    guard_expected(mean)?;
    let mut rng = rng_for(seed);
    let n = poisson_count(&mut rng, mean);
    let coords = (0..n * torus.d).map(|_| uniform_coord(&mut rng, torus)).collect();
    Ok(PointSample {
        torus: *torus,
        process,
        seed,
        coords,
    })
}

/// Matérn II: Poisson parents with i.i.d. uniform marks; a parent is kept iff
/// no other parent closer than `r_hard` carries a smaller (older) mark.
pub fn sample_matern2<T: Real>(
    lambda_parent: T,
    r_hard: T,
    torus: &TorusSpec<T>,
    seed: u64,
) -> Result<PointSample<T>> {
    torus.validate()?;
    let process = ProcessSpec::MaternII {
        lambda_parent,
        r_hard,
    };
    process.validate()?;
    let mean = (lambda_parent * torus.volume()).to_f64_lossy();
    guard_expected(mean)?;
    let mut rng = rng_for(seed);
    let n = poisson_count(&mut rng, mean);
    let coords: Vec<T> = (0..n * torus.d).map(|_| uniform_coord(&mut rng, torus)).collect();
    let marks: Vec<f64> = (0..n).map(|_| rng.random()).collect();

    let parents = PointSample {
        torus: *torus,
        process,
        seed,
        coords,
    };
    let mut keep = vec![true; n];
    let r2 = r_hard * r_hard;
    CellList::new(&parents, r_hard).for_each_pair_within(&parents, r_hard, |i, j, _, dist2| {
        if dist2 < r2 {
            if marks[i] < marks[j] {
                keep[j] = false;
            } else {
                keep[i] = false;
            }
        }
    });
    let d = torus.d;
    let coords = (0..n)
        .filter(|&i| keep[i])
        .flat_map(|i| parents.coords[i * d..(i + 1) * d].to_vec())
        .collect();
    Ok(PointSample {
        torus: *torus,
        process,
        seed,
        coords,
    })
}

/// One point per cell of the cubic lattice of spacing `a`, jittered by
/// `U[-eta, eta]^d` and shifted by a global uniform vector.
pub fn sample_jittered_lattice<T: Real>(
    spacing: T,
    jitter: T,
    torus: &TorusSpec<T>,
    seed: u64,
) -> Result<PointSample<T>> {
    torus.validate()?;
    let process = ProcessSpec::JitteredLattice { spacing, jitter };
    process.validate()?;
    let ratio = torus.side / spacing;
    let k = Float::round(ratio);
    if Float::abs(ratio - k) > T::lit(1e-9) * ratio {
        return Err(Error::config(
            "spacing",
            format!("torus side {} is not a multiple of spacing {}", torus.side, spacing),
        ));
    }
    let per_side = k.to_f64_lossy() as usize;
    let d = torus.d;
    let cells = per_side.pow(d as u32);
    guard_expected(cells as f64)?;
    let mut rng = rng_for(seed);
    let shift: Vec<T> = (0..d)
        .map(|_| T::lit(rng.random::<f64>()) * spacing)
        .collect();
    let mut coords = Vec::with_capacity(cells * d);
    for cell in 0..cells {
        let mut rem = cell;
        let mut idx = [0usize; 3];
        for ax in (0..d).rev() {
            idx[ax] = rem % per_side;
            rem /= per_side;
        }
        for ax in 0..d {
            let u: f64 = rng.random();
            let j = T::lit(2.0 * u - 1.0) * jitter;
            coords.push(torus.wrap_coord(of_usize::<T>(idx[ax]) * spacing + shift[ax] + j));
        }
    }
    Ok(PointSample {
        torus: *torus,
        process,
        seed,
        coords,
    })
}

/// Closed-form second-order intensity, when one is available.
///
/// * Poisson: `λ²`.
/// * Jittered lattice with `eta < a/4`: contact scale `ℓ = a − 2η`, and the
///   supremum of the cube-averaged two-point density is attained for cubes
///   centred one lattice vector apart, giving `λ ℓ^{-2d} (ℓ − 2η/3)^d`
///   (`2η/3` is the mean absolute difference of two independent jitters).
///   For `η = 0` this reduces to `λ²`.
/// * Matérn II: `None`; estimate it from samples instead.
pub fn analytic_lambda2<T: Real>(process: &ProcessSpec<T>, d: usize) -> Option<T> {
    match *process {
        ProcessSpec::Poisson { lambda } => Some(lambda * lambda),
        ProcessSpec::JitteredLattice { spacing, jitter } => {
            if !(jitter < spacing / T::lit(4.0)) {
                return None;
            }
            let lambda = T::one() / Float::powi(spacing, d as i32);
            let ell = spacing - T::lit(2.0) * jitter;
            let mean_gap = ell - T::lit(2.0) / T::lit(3.0) * jitter;
            Some(lambda * Float::powi(mean_gap, d as i32) / Float::powi(ell, 2 * d as i32))
        }
        ProcessSpec::MaternII { .. } => None,
    }
}

/// Minimal sup-norm separation of the process, where it is deterministic.
pub fn analytic_contact_scale<T: Real>(process: &ProcessSpec<T>) -> Option<T> {
    match *process {
        ProcessSpec::JitteredLattice { spacing, jitter } => Some(spacing - T::lit(2.0) * jitter),
        _ => None,
    }
}
