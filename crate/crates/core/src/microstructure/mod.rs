//! Inclusion geometry, rasterization and statistical diagnostics.

pub mod geometry;
pub mod lambda2;
pub mod raster;

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use geometry::{
    cluster_decomposition, is_well_separated, min_separation, rho_separations, volume_fraction,
    Clusters, DisjointSet, VolumeFractionMethod, CLUSTER_LINK_DISTANCE, WELL_SEPARATED_RHO,
};
pub use lambda2::{estimate_lambda2, pair_histogram, BinSide, Lambda2Config, Lambda2Estimate, PairHistogram};
pub use raster::{inclusion_mask, GridField};

use crate::error::{Error, Result};
use crate::point_process::PointSample;
use crate::scalar::Real;

/// Per-sample geometric diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport<T> {
    pub d: usize,
    #[serde(rename = "L")]
    pub side: T,
    pub seed: u64,
    pub points: usize,
    /// Minimal sup-norm separation (`+inf` below two points).
    pub min_separation: T,
    /// Half nearest-neighbor Euclidean distance per point.
    pub rho: Vec<T>,
    pub clusters: Clusters,
    pub volume_fraction: T,
    /// Bin-maximum pair density of this sample alone (`None` when it has no pairs).
    pub lambda2: Option<T>,
    pub lambda2_bin_side: T,
}

impl<T: Real> GeometryReport<T> {
    pub fn compute(
        sample: &PointSample<T>,
        method: VolumeFractionMethod,
        lambda2_cfg: &Lambda2Config<T>,
        contact_scale: Option<T>,
    ) -> Result<Self> {
        let side = lambda2_cfg.bin_side(contact_scale);
        let est = estimate_lambda2(std::slice::from_ref(sample), side, lambda2_cfg)?;
        Ok(Self {
            d: sample.dim(),
            side: sample.torus.side,
            seed: sample.seed,
            points: sample.len(),
            min_separation: min_separation(sample),
            rho: rho_separations(sample),
            clusters: cluster_decomposition(sample),
            volume_fraction: volume_fraction(sample, method),
            lambda2: (est.max_count > 0).then_some(est.lambda2),
            lambda2_bin_side: est.bin_side,
        })
    }

    pub fn singletons(&self) -> usize {
        self.clusters.groups.iter().filter(|g| g.len() == 1).count()
    }

    pub fn well_separated(&self) -> usize {
        self.rho.iter().filter(|&&r| is_well_separated(r)).count()
    }

    pub fn largest_cluster(&self) -> usize {
        self.clusters.groups.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Flat `key = value` block; vectors are space separated.
    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "L = {}", self.side);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "points = {}", self.points);
        let _ = writeln!(s, "min_separation = {:.16e}", self.min_separation);
        let _ = writeln!(s, "volume_fraction = {:.16e}", self.volume_fraction);
        match self.lambda2 {
            Some(v) => {
                let _ = writeln!(s, "lambda2 = {v:.16e}");
            }
            None => {
                let _ = writeln!(s, "lambda2 = none");
            }
        }
        let _ = writeln!(s, "lambda2_bin_side = {}", self.lambda2_bin_side);
        let _ = writeln!(s, "clusters = {}", self.clusters.len());
        let _ = writeln!(s, "singletons = {}", self.singletons());
        let _ = writeln!(s, "well_separated = {}", self.well_separated());
        let _ = writeln!(s, "largest_cluster = {}", self.largest_cluster());
        let _ = writeln!(
            s,
            "rho = {}",
            join(&mut self.rho.iter().map(|r| format!("{r:.16e}")))
        );
        let _ = writeln!(
            s,
            "cluster_of = {}",
            join(&mut self.clusters.cluster_of.iter().map(|c| c.to_string()))
        );
        s
    }

    pub fn csv_header() -> &'static str {
        "d,L,seed,points,min_separation,volume_fraction,lambda2,clusters,singletons,well_separated,largest_cluster"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.16e},{:.16e},{},{},{},{},{}",
            self.d,
            self.side,
            self.seed,
            self.points,
            self.min_separation,
            self.volume_fraction,
            self.lambda2.map_or("".to_string(), |v| format!("{v:.16e}")),
            self.clusters.len(),
            self.singletons(),
            self.well_separated(),
            self.largest_cluster()
        )
    }
}

impl<T: Real + FromStr> GeometryReport<T> {
    /// Parses the block written by [`to_kv_text`](Self::to_kv_text).
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            map.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
        }
        let get = |k: &str| {
            map.get(k).ok_or_else(|| Error::Parse {
                line: 0,
                message: format!("missing key {k}"),
            })
        };
        fn parse<U: FromStr>(line: usize, s: &str) -> Result<U> {
            s.parse().map_err(|_| Error::Parse {
                line,
                message: format!("cannot parse {s:?}"),
            })
        }
        fn parse_list<U: FromStr>(line: usize, s: &str) -> Result<Vec<U>> {
            s.split_whitespace().map(|t| parse(line, t)).collect()
        }
        let (l, v) = get("d")?;
        let d = parse(*l, v)?;
        let (l, v) = get("L")?;
        let side = parse(*l, v)?;
        let (l, v) = get("seed")?;
        let seed = parse(*l, v)?;
        let (l, v) = get("points")?;
        let points = parse(*l, v)?;
        let (l, v) = get("min_separation")?;
        let min_sep = parse(*l, v)?;
        let (l, v) = get("volume_fraction")?;
        let vf = parse(*l, v)?;
        let (l, v) = get("lambda2")?;
        let lambda2 = if v == "none" { None } else { Some(parse(*l, v)?) };
        let (l, v) = get("lambda2_bin_side")?;
        let bin = parse(*l, v)?;
        let (l, v) = get("rho")?;
        let rho = parse_list(*l, v)?;
        let (l, v) = get("cluster_of")?;
        let cluster_of: Vec<usize> = parse_list(*l, v)?;
        let count = cluster_of.iter().map(|&c| c + 1).max().unwrap_or(0);
        let mut groups = vec![Vec::new(); count];
        for (i, &c) in cluster_of.iter().enumerate() {
            groups[c].push(i);
        }
        Ok(Self {
            d,
            side,
            seed,
            points,
            min_separation: min_sep,
            rho,
            clusters: Clusters { groups, cluster_of },
            volume_fraction: vf,
            lambda2,
            lambda2_bin_side: bin,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::point_process::{ProcessSpec, TorusSpec};

    #[test]
    fn kv_round_trip() {
        let t = TorusSpec::new(2, 32.0).unwrap();
        let s = ProcessSpec::Poisson { lambda: 0.05 }.sample(&t, 5).unwrap();
        let r = GeometryReport::compute(
            &s,
            VolumeFractionMethod::Raster { n: 256 },
            &Lambda2Config::default(),
            None,
        )
        .unwrap();
        let back = GeometryReport::<f64>::from_kv_text(&r.to_kv_text()).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            r.csv_row().split(',').count(),
            GeometryReport::<f64>::csv_header().split(',').count()
        );
    }
}
