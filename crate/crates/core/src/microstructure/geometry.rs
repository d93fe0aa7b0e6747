//! Separation scales and cluster structure of the inclusion set.

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::point_process::PointSample;
use crate::scalar::{of_usize, Real};
use crate::spatial::CellList;

/// Fattened unit balls (radius 2) overlap iff centers are closer than this.
pub const CLUSTER_LINK_DISTANCE: f64 = 4.0;

/// `ρ_n` at or above this value marks a well-separated inclusion.
pub const WELL_SEPARATED_RHO: f64 = 2.0;

/// Minimal sup-norm torus distance between distinct centers (`+inf` for fewer than two).
pub fn min_separation<T: Real>(sample: &PointSample<T>) -> T {
    let n = sample.len();
    if n < 2 {
        return T::infinity();
    }
    let d = sample.dim();
    let cl = CellList::new(sample, T::lit(2.0));
    let nn = cl.nearest_neighbor_distances(sample);
    let r_euclid = nn.iter().copied().fold(T::infinity(), Float::min);
    // |x|_inf <= |x|_2 <= sqrt(d) |x|_inf, so the sup-norm minimiser lies
    // within Euclidean distance sqrt(d) * r_euclid.
    let reach = r_euclid * Float::sqrt(of_usize::<T>(d)) * T::lit(1.0 + 1e-9) + T::min_positive_value();
    let mut best = r_euclid;
    let torus = sample.torus;
    CellList::new(sample, reach).for_each_pair_within(sample, reach, |i, j, _, _| {
        best = Float::min(best, torus.dist_sup(sample.center(i), sample.center(j)));
    });
    best
}

/// `ρ_n`: half the Euclidean torus distance to the nearest other center.
pub fn rho_separations<T: Real>(sample: &PointSample<T>) -> Vec<T> {
    let cl = CellList::new(sample, T::lit(2.0));
    let half = T::lit(0.5);
    cl.nearest_neighbor_distances(sample)
        .into_iter()
        .map(|r| r * half)
        .collect()
}

pub fn is_well_separated<T: Real>(rho: T) -> bool {
    rho >= T::lit(WELL_SEPARATED_RHO)
}

/// Union–find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        ra
    }
}

/// Partition of center indices into clusters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clusters {
    /// Each cluster sorted ascending; clusters ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    /// Cluster index of each center.
    pub cluster_of: Vec<usize>,
}

impl Clusters {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn is_singleton(&self, n: usize) -> bool {
        self.groups[self.cluster_of[n]].len() == 1
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.groups.iter().map(Vec::len).collect();
        s.sort_unstable();
        s
    }
}

/// Connected components of the radius-2 fattened inclusions: centers are
/// linked iff their Euclidean torus distance is `< 4`.
pub fn cluster_decomposition<T: Real>(sample: &PointSample<T>) -> Clusters {
    let n = sample.len();
    let link = T::lit(CLUSTER_LINK_DISTANCE);
    let mut uf = DisjointSet::new(n);
    CellList::new(sample, link).for_each_pair_within(sample, link, |i, j, _, _| {
        uf.union(i, j);
    });
    let mut label = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut cluster_of = vec![0usize; n];
    for i in 0..n {
        let root = uf.find(i);
        if label[root] == usize::MAX {
            label[root] = groups.len();
            groups.push(Vec::new());
        }
        cluster_of[i] = label[root];
        groups[label[root]].push(i);
    }
    Clusters { groups, cluster_of }
}

/// How the volume fraction is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum VolumeFractionMethod {
    /// Fraction of the `N^d` cell centers covered by the inclusions.
    Raster { n: usize },
    /// Fraction of `probes` uniform points covered by the inclusions.
    MonteCarlo { probes: usize, seed: u64 },
}

/// Volume fraction of the union of unit balls.
pub fn volume_fraction<T: Real>(sample: &PointSample<T>, method: VolumeFractionMethod) -> T {
    match method {
        VolumeFractionMethod::Raster { n } => {
            let mask = super::raster::inclusion_mask(sample, n);
            let covered = mask.iter().filter(|&&m| m != 0).count();
            of_usize::<T>(covered) / of_usize::<T>(mask.len())
        }
        VolumeFractionMethod::MonteCarlo { probes, seed } => {
            if probes == 0 || sample.is_empty() {
                return T::zero();
            }
            let cl = CellList::new(sample, T::one());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = sample.dim();
            let side = sample.torus.side.to_f64_lossy();
            let mut x = vec![T::zero(); d];
            let mut hits = 0usize;
            for _ in 0..probes {
                for c in x.iter_mut() {
                    *c = sample.torus.wrap_coord(T::lit(rng.random::<f64>() * side));
                }
                if cl.any_within(sample, &x, T::one()) {
                    hits += 1;
                }
            }
            of_usize::<T>(hits) / of_usize::<T>(probes)
        }
    }
}
