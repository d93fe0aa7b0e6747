//! Ensemble sweeps over the inclusion intensity.
//!
//! For every intensity `λ_i`, torus side `L` and member `m` one sample is
//! drawn with seed `seed_base + (i · n_L + l) · M + m`, where `l` indexes the
//! distinct sides. The same sample is rasterized at every resolution `N`
//! configured for that side, so discretization differences are paired.
//!
//! Per member the deviation from the dilute expansion is
//! `D_m = Ā_m - A₁ - φ̂_m Â₂`, with `φ̂_m` the raster volume fraction. The
//! reported error is `ε = ‖mean D‖` (operator norm). Richardson extrapolation
//! runs first in `h = L/N` per member, then in `L^{-d}` across sides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use num_traits::Float;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corrector::{effective_tensor, Scheme, SolverConfig};
use crate::error::{Error, Result};
use crate::extrapolation::richardson_weights;
use crate::microstructure::{estimate_lambda2, GridField, Lambda2Config};
use crate::point_process::{analytic_contact_scale, analytic_lambda2, ball_volume, PointSample, ProcessSpec, TorusSpec};
use crate::scalar::{of_usize, Real};
use crate::single_inclusion::{hat_a2_isotropic, hat_a2_numeric, HatA2Config, PhaseModel};
use crate::tensor::Tensor;

/// Fraction of failed members above which a sweep aborts.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;
/// Ensembles smaller than this are flagged as underpowered.
pub const MIN_RECOMMENDED_ENSEMBLE: usize = 8;

/// Point process family; the sweep grid sets its intensity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessFamily<T> {
    Poisson,
    /// Matérn II with the parent intensity chosen so the retained intensity is `λ`.
    #[serde(rename = "matern2")]
    MaternII { r_hard: T },
    /// Lattice spacing `λ^{-1/d}`, which must divide `L`.
    JitteredLattice { jitter: T },
}

impl<T: Real> ProcessFamily<T> {
    pub fn at(&self, lambda: T, d: usize) -> Result<ProcessSpec<T>> {
        let spec = match *self {
            ProcessFamily::Poisson => ProcessSpec::Poisson { lambda },
            ProcessFamily::MaternII { r_hard } => {
                let v = ball_volume(r_hard, d);
                let x = lambda * v;
                if !(x < T::one()) {
                    return Err(Error::config(
                        "intensities",
                        format!("Matérn II cannot retain intensity {lambda} with r_hard = {r_hard}"),
                    ));
                }
                ProcessSpec::MaternII {
                    lambda_parent: -Float::ln_1p(-x) / v,
                    r_hard,
                }
            }
            ProcessFamily::JitteredLattice { jitter } => ProcessSpec::JitteredLattice {
                spacing: Float::powf(lambda, -T::one() / of_usize::<T>(d)),
                jitter,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level<T> {
    #[serde(rename = "L")]
    pub side: T,
    #[serde(rename = "N")]
    pub n: usize,
}

/// Which `Â₂` the first-order term uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstOrder {
    /// Single-inclusion correction of the rasterized ball at the level's `h`.
    #[default]
    GridConsistent,
    /// Closed form for isotropic phases, otherwise the numeric correction at
    /// the configured resolution.
    Continuum,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct SweepConfig<T: Real> {
    pub d: usize,
    pub process: ProcessFamily<T>,
    /// Strictly increasing point intensities.
    pub intensities: Vec<T>,
    pub levels: Vec<Level<T>>,
    pub ensemble_size: usize,
    pub phases: PhaseModel<T>,
    #[serde(default)]
    pub solver: SolverConfig<T>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub first_order: FirstOrder,
    /// Move centers to nodes of the coarsest grid of their side, so every
    /// inclusion has the same raster shape at every level.
    #[serde(default = "yes")]
    pub snap_to_grid: bool,
    /// Replace each `D_m` by its average over the axis permutations and
    /// reflections (isotropic phases only).
    #[serde(default = "yes")]
    pub symmetrize: bool,
    #[serde(default)]
    pub hat_a2: HatA2Config<T>,
    #[serde(default)]
    pub lambda2: Lambda2Config<T>,
    /// Overrides the contact scale used as λ₂ bin side.
    #[serde(default)]
    pub contact_scale: Option<T>,
}

impl<T: Real> SweepConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::config("d", format!("must be 2 or 3, got {}", self.d)));
        }
        if self.phases.dim() != self.d {
            return Err(Error::config("phases", "matrix size does not match d"));
        }
        if self.intensities.is_empty() {
            return Err(Error::config("intensities", "need at least one intensity"));
        }
        if self.intensities.iter().any(|&l| !(l > T::zero())) {
            return Err(Error::config("intensities", "intensities must be positive"));
        }
        if self.intensities.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::config("intensities", "intensity grid must be strictly increasing"));
        }
        if self.ensemble_size == 0 {
            return Err(Error::config("ensemble_size", "must be positive"));
        }
        if self.levels.len() < 2 {
            return Err(Error::config("levels", "need at least two (L, N) levels"));
        }
        let mut seen = BTreeSet::new();
        for lv in &self.levels {
            let t = TorusSpec::new(self.d, lv.side)?;
            GridField::check_resolution(&t, lv.n)?;
            if !seen.insert((lv.side.to_f64_lossy().to_bits(), lv.n)) {
                return Err(Error::config("levels", "duplicate (L, N) level"));
            }
            if self.first_order == FirstOrder::GridConsistent {
                let r = of_usize::<T>(lv.n) / lv.side;
                if Float::fract(r) != T::zero() {
                    return Err(Error::config(
                        "levels",
                        format!("grid-consistent correction needs N/L integer, got N = {} at L = {}", lv.n, lv.side),
                    ));
                }
            }
        }
        for (side, ns) in self.sides_with_resolutions() {
            let base = ns[0];
            if ns.iter().any(|&n| n % base != 0) {
                return Err(Error::config(
                    "levels",
                    format!("resolutions at L = {side} must be multiples of the coarsest ({base})"),
                ));
            }
        }
        self.solver.validate()?;
        for &lambda in &self.intensities {
            self.process.at(lambda, self.d)?;
        }
        Ok(())
    }

    /// Distinct sides, ascending, each with its ascending resolutions.
    pub fn sides_with_resolutions(&self) -> Vec<(T, Vec<usize>)> {
        let mut map: BTreeMap<u64, (T, Vec<usize>)> = BTreeMap::new();
        for lv in &self.levels {
            map.entry(lv.side.to_f64_lossy().to_bits())
                .or_insert((lv.side, Vec::new()))
                .1
                .push(lv.n);
        }
        let mut out: Vec<(T, Vec<usize>)> = map.into_values().collect();
        out.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite sides"));
        for (_, ns) in out.iter_mut() {
            ns.sort_unstable();
        }
        out
    }

    pub fn seed(&self, lambda_index: usize, side_index: usize, member: usize) -> u64 {
        let n_sides = self.sides_with_resolutions().len() as u64;
        let m = self.ensemble_size as u64;
        self.seed_base
            .wrapping_add(((lambda_index as u64) * n_sides + side_index as u64) * m + member as u64)
    }

    /// Sample of member `m` at intensity `i` on side `l`, snapped if configured.
    pub fn member_sample(&self, i: usize, l: usize, m: usize) -> Result<PointSample<T>> {
        let (side, ns) = &self.sides_with_resolutions()[l];
        let torus = TorusSpec::new(self.d, *side)?;
        let spec = self.process.at(self.intensities[i], self.d)?;
        let sample = spec.sample(&torus, self.seed(i, l, m))?;
        Ok(if self.snap_to_grid {
            sample.snapped_to_grid(*side / of_usize::<T>(ns[0]))
        } else {
            sample
        })
    }

    fn solver_for(&self) -> SolverConfig<T> {
        let mut s = self.solver;
        if s.scheme == Scheme::ConjugateGradient && !self.phases.is_symmetric() {
            s.scheme = Scheme::FixedPoint;
            s.alpha0 = None;
        }
        s
    }
}

/// One ensemble member at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberRecord {
    pub lambda_index: usize,
    #[serde(rename = "L")]
    pub side: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub member: usize,
    pub seed: u64,
    pub points: usize,
    pub phi: f64,
    /// Row-major `Ā`; empty when the solve failed.
    pub abar: Vec<f64>,
    pub iterations: usize,
    pub error: Option<String>,
}

impl MemberRecord {
    fn key(&self) -> (usize, u64, usize, usize) {
        (self.lambda_index, self.side.to_bits(), self.n, self.member)
    }
}

/// `Â₂` used for one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct LevelCorrection<T: Real> {
    #[serde(rename = "L")]
    pub side: T,
    #[serde(rename = "N")]
    pub n: usize,
    pub value: Tensor<T>,
    pub error: T,
    pub flagged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Level,
    Extrapolated,
}

/// Aggregate over the ensemble at one `(λ, L, N)`, or the extrapolated limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct ReportRow<T: Real> {
    pub kind: RowKind,
    pub lambda_index: usize,
    pub lambda: T,
    /// `None` for extrapolated rows.
    #[serde(rename = "L")]
    pub side: Option<T>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub members_ok: usize,
    pub members_failed: usize,
    pub seed_first: u64,
    pub seed_last: u64,
    pub phi_mean: T,
    pub phi_se: T,
    pub lambda2_analytic: Option<T>,
    pub lambda2_hat: Option<T>,
    pub abar_mean: Tensor<T>,
    pub abar_se: Tensor<T>,
    /// `A₁ + φ̂ Â₂` with the correction used for `ε`.
    pub cm: Tensor<T>,
    pub hat_a2: Tensor<T>,
    pub eps: T,
    pub eps_se: T,
    pub above_noise: bool,
    /// Extrapolation guard tripped or ensemble below the recommended size.
    pub flagged: bool,
}

impl<T: Real> ReportRow<T> {
    /// `λ₂` used for scaling: analytic when known, else the estimate.
    pub fn lambda2(&self) -> Option<T> {
        self.lambda2_analytic.or(self.lambda2_hat)
    }

    pub fn eps_over_phi(&self) -> T {
        if self.phi_mean > T::zero() {
            self.eps / self.phi_mean
        } else {
            T::nan()
        }
    }
}

/// Least-squares fit of `log ε` against `log(λ₂ |log λ₂|)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ScalingFit {
    Fit {
        slope: f64,
        constant: f64,
        r2: f64,
        /// Slope of `log ε` against `log φ̂` on the same rows.
        phi_exponent: f64,
        points: usize,
    },
    Inconclusive {
        reason: String,
        points_above_noise: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Real + Serialize",
    deserialize = "T: Real + Deserialize<'de>"
))]
pub struct DiluteSweepReport<T: Real> {
    pub config: SweepConfig<T>,
    pub corrections: Vec<LevelCorrection<T>>,
    pub rows: Vec<ReportRow<T>>,
    pub fit: ScalingFit,
    pub members_total: usize,
    pub members_failed: usize,
    /// Wall-clock seconds; the only field that differs between replays.
    pub elapsed_seconds: f64,
}

/// Checkpointing and progress options.
#[derive(Default)]
pub struct SweepOptions<'a> {
    /// JSON-lines file: the config on the first line, one member per line after.
    pub checkpoint: Option<PathBuf>,
    /// Reuse members already present in the checkpoint.
    pub resume: bool,
    pub progress: Option<&'a (dyn Fn(&MemberRecord) + Sync)>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: serde_json::Value,
}

fn read_checkpoint(path: &Path, config: &serde_json::Value) -> Result<Vec<MemberRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 {
            let h: CheckpointHeader = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: 1,
                message: format!("checkpoint header: {e}"),
            })?;
            if &h.config != config {
                return Err(Error::config("resume", "checkpoint was written for a different configuration"));
            }
            continue;
        }
        // A torn final line from an interrupted run is ignored.
        match serde_json::from_str::<MemberRecord>(&line) {
            Ok(r) => out.push(r),
            Err(_) => break,
        }
    }
    Ok(out)
}

fn mean_se<T: Real>(values: &[Tensor<T>], d: usize) -> (Tensor<T>, Tensor<T>) {
    let m = values.len();
    if m == 0 {
        return (Tensor::zeros(d).map(|_| T::nan()), Tensor::zeros(d).map(|_| T::nan()));
    }
    let inv = T::one() / of_usize::<T>(m);
    let mean = values.iter().fold(Tensor::zeros(d), |a, b| a + *b).scale(inv);
    if m < 2 {
        return (mean, Tensor::zeros(d));
    }
    let var = values
        .iter()
        .fold(Tensor::zeros(d), |a, b| a + (*b - mean).map(|x| x * x))
        .scale(T::one() / of_usize::<T>(m - 1));
    (mean, var.map(|v| Float::sqrt(v * inv)))
}

fn scalar_mean_se<T: Real>(values: &[T]) -> (T, T) {
    let t: Vec<Tensor<T>> = values.iter().map(|&v| Tensor::scaled_identity(1, v)).collect();
    let (m, s) = mean_se(&t, 1);
    (m.get(0, 0), s.get(0, 0))
}

/// Per-member quantities at one level, keyed by member index.
struct LevelData<T: Real> {
    phi: BTreeMap<usize, T>,
    abar: BTreeMap<usize, Tensor<T>>,
    dev: BTreeMap<usize, Tensor<T>>,
    failed: usize,
}

/// Ensemble statistics at one side after extrapolation in `h`.
struct SideLimit<T: Real> {
    side: T,
    abar: (Tensor<T>, Tensor<T>),
    dev: (Tensor<T>, Tensor<T>),
    phi: (T, T),
    members: usize,
    guard_ok: bool,
}

/// Per-member values extrapolated to `h -> 0`.
struct MemberLimits<T: Real> {
    phi: Vec<T>,
    abar: Vec<Tensor<T>>,
    dev: Vec<Tensor<T>>,
    guard_ok: bool,
}

/// Runs the sweep described by `cfg`.
pub fn run_sweep<T>(cfg: &SweepConfig<T>, opts: &SweepOptions<'_>) -> Result<DiluteSweepReport<T>>
where
    T: Real + Serialize + DeserializeOwned,
{
    cfg.validate()?;
    let start = Instant::now();
    let sides = cfg.sides_with_resolutions();
    let d = cfg.d;

    let config_json = serde_json::to_value(cfg)?;
    let mut done: BTreeMap<(usize, u64, usize, usize), MemberRecord> = BTreeMap::new();
    let writer = match &opts.checkpoint {
        Some(path) => {
            if opts.resume {
                for r in read_checkpoint(path, &config_json)? {
                    done.insert(r.key(), r);
                }
            }
            let mut w = BufWriter::new(
                OpenOptions::new()
                    .create(true)
                    .write(true)
                    .truncate(true)
                    .open(path)?,
            );
            serde_json::to_writer(&mut w, &CheckpointHeader { config: config_json.clone() })?;
            writeln!(w)?;
            for r in done.values() {
                serde_json::to_writer(&mut w, r)?;
                writeln!(w)?;
            }
            w.flush()?;
            Some(Mutex::new(w))
        }
        None => None,
    };

    let solver = cfg.solver_for();
    let mut jobs = Vec::new();
    for i in 0..cfg.intensities.len() {
        for l in 0..sides.len() {
            for m in 0..cfg.ensemble_size {
                jobs.push((i, l, m));
            }
        }
    }
    let computed: Vec<Vec<MemberRecord>> = jobs
        .par_iter()
        .map(|&(i, l, m)| -> Result<Vec<MemberRecord>> {
            let (side, ns) = &sides[l];
            let side_f = side.to_f64_lossy();
            let pending: Vec<usize> = ns
                .iter()
                .copied()
                .filter(|&n| !done.contains_key(&(i, side_f.to_bits(), n, m)))
                .collect();
            if pending.is_empty() {
                return Ok(Vec::new());
            }
            let sample = cfg.member_sample(i, l, m)?;
            let mut out = Vec::new();
            for n in pending {
                let field = GridField::rasterize(&sample, cfg.phases, n)?;
                let phi = field.volume_fraction();
                let mut rec = MemberRecord {
                    lambda_index: i,
                    side: side_f,
                    n,
                    member: m,
                    seed: cfg.seed(i, l, m),
                    points: sample.len(),
                    phi: phi.to_f64_lossy(),
                    abar: Vec::new(),
                    iterations: 0,
                    error: None,
                };
                match effective_tensor(&field, &solver) {
                    Ok(sol) => {
                        rec.abar = sol.abar.to_row_major().iter().map(|v| v.to_f64_lossy()).collect();
                        rec.iterations = sol.directions.iter().map(|s| s.iterations).sum();
                    }
                    Err(e) => rec.error = Some(e.to_string()),
                }
                if let Some(w) = &writer {
                    let mut w = w.lock().expect("checkpoint writer poisoned");
                    serde_json::to_writer(&mut *w, &rec)?;
                    writeln!(w)?;
                    w.flush()?;
                }
                if let Some(p) = opts.progress {
                    p(&rec);
                }
                out.push(rec);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    for r in computed.into_iter().flatten() {
        done.insert(r.key(), r);
    }

    let members_total = done.len();
    let members_failed = done.values().filter(|r| r.error.is_some()).count();
    if members_total > 0 && (members_failed as f64) > MAX_FAILURE_FRACTION * members_total as f64 {
        return Err(Error::SweepFailed {
            failed: members_failed,
            total: members_total,
        });
    }

    // First-order corrections per level.
    let mut corrections = Vec::new();
    let mut correction_cache: BTreeMap<usize, (Tensor<T>, T, bool)> = BTreeMap::new();
    for (side, ns) in &sides {
        for &n in ns {
            let (value, error, flagged) = match (cfg.first_order, cfg.phases.isotropic_scalars()) {
                (FirstOrder::Continuum, Some((a, b))) => (hat_a2_isotropic(a, b, d)?, T::zero(), false),
                (first_order, _) => {
                    let r = if first_order == FirstOrder::GridConsistent {
                        (of_usize::<T>(n) / *side).to_f64_lossy() as usize
                    } else {
                        cfg.hat_a2.cells_per_unit
                    };
                    if let Some(c) = correction_cache.get(&r) {
                        *c
                    } else {
                        let est = hat_a2_numeric(
                            &cfg.phases,
                            &HatA2Config {
                                cells_per_unit: r,
                                ..cfg.hat_a2.clone()
                            },
                        )?;
                        let c = (est.value, est.error, est.flagged);
                        correction_cache.insert(r, c);
                        c
                    }
                }
            };
            corrections.push(LevelCorrection {
                side: *side,
                n,
                value,
                error,
                flagged,
            });
        }
    }
    let correction_of = |side: T, n: usize| -> Tensor<T> {
        corrections
            .iter()
            .find(|c| c.side == side && c.n == n)
            .expect("correction for every level")
            .value
    };

    let symmetrize = cfg.symmetrize && cfg.phases.isotropic_scalars().is_some();
    let a1 = *cfg.phases.a1();
    let mut rows = Vec::new();
    for (i, &lambda) in cfg.intensities.iter().enumerate() {
        let spec = cfg.process.at(lambda, d)?;
        let lambda2_analytic = analytic_lambda2(&spec, d);
        // Per side: extrapolated-in-h member values and the mean row data.
        let mut side_limits: Vec<SideLimit<T>> = Vec::new();
        for (l, (side, ns)) in sides.iter().enumerate() {
            let samples: Vec<PointSample<T>> = (0..cfg.ensemble_size)
                .map(|m| cfg.member_sample(i, l, m))
                .collect::<Result<_>>()?;
            let contact = cfg
                .contact_scale
                .or_else(|| analytic_contact_scale(&spec));
            let lambda2_hat = estimate_lambda2(&samples, cfg.lambda2.bin_side(contact), &cfg.lambda2)
                .ok()
                .filter(|e| e.max_count > 0)
                .map(|e| e.lambda2);
            let mut per_level: Vec<LevelData<T>> = Vec::new();
            for &n in ns {
                let hat = correction_of(*side, n);
                let mut data = LevelData {
                    phi: BTreeMap::new(),
                    abar: BTreeMap::new(),
                    dev: BTreeMap::new(),
                    failed: 0,
                };
                for m in 0..cfg.ensemble_size {
                    let rec = &done[&(i, side.to_f64_lossy().to_bits(), n, m)];
                    if rec.error.is_some() {
                        data.failed += 1;
                        continue;
                    }
                    let rows_: Vec<Vec<T>> = rec
                        .abar
                        .chunks(d)
                        .map(|r| r.iter().map(|&v| T::lit(v)).collect())
                        .collect();
                    let abar = Tensor::from_rows(&rows_)?;
                    let phi = T::lit(rec.phi);
                    let mut dev = abar - a1 - hat.scale(phi);
                    if symmetrize {
                        dev = dev.cubic_average();
                    }
                    data.phi.insert(m, phi);
                    data.abar.insert(m, abar);
                    data.dev.insert(m, dev);
                }
                let phis: Vec<T> = data.phi.values().copied().collect();
                let abars: Vec<Tensor<T>> = data.abar.values().copied().collect();
                let devs: Vec<Tensor<T>> = data.dev.values().copied().collect();
                let (phi_mean, phi_se) = scalar_mean_se(&phis);
                let (abar_mean, abar_se) = mean_se(&abars, d);
                let (dev_mean, dev_se) = mean_se(&devs, d);
                let eps = dev_mean.operator_norm();
                let eps_se = dev_se.frobenius_norm();
                rows.push(ReportRow {
                    kind: RowKind::Level,
                    lambda_index: i,
                    lambda,
                    side: Some(*side),
                    n: Some(n),
                    members_ok: devs.len(),
                    members_failed: data.failed,
                    seed_first: cfg.seed(i, l, 0),
                    seed_last: cfg.seed(i, l, cfg.ensemble_size - 1),
                    phi_mean,
                    phi_se,
                    lambda2_analytic,
                    lambda2_hat,
                    abar_mean,
                    abar_se,
                    cm: a1 + hat.scale(phi_mean),
                    hat_a2: hat,
                    eps,
                    eps_se,
                    above_noise: eps > T::lit(3.0) * eps_se,
                    flagged: cfg.ensemble_size < MIN_RECOMMENDED_ENSEMBLE,
                });
                per_level.push(data);
            }

            // Richardson in h per member, on the two finest resolutions.
            let k = per_level.len();
            let limits = if k >= 2 {
                let (f1, f2) = (&per_level[k - 2], &per_level[k - 1]);
                let h1 = *side / of_usize::<T>(ns[k - 2]);
                let h2 = *side / of_usize::<T>(ns[k - 1]);
                let (c1, c2) = richardson_weights(h1, h2);
                let common: Vec<usize> = f1.dev.keys().filter(|m| f2.dev.contains_key(m)).copied().collect();
                let mut guard_ok = true;
                if k >= 3 {
                    let f0 = &per_level[k - 3];
                    let mean_dev = |f: &LevelData<T>| mean_se(&f.dev.values().copied().collect::<Vec<_>>(), d);
                    let (m0, s0) = mean_dev(f0);
                    let (m1, _) = mean_dev(f1);
                    let (m2, _) = mean_dev(f2);
                    let noise = T::lit(3.0) * s0.max_abs();
                    let (a, b) = (m1 - m0, m2 - m1);
                    for (x, y) in a.to_row_major().into_iter().zip(b.to_row_major()) {
                        if (Float::abs(x) > noise || Float::abs(y) > noise)
                            && (x * y < T::zero() || Float::abs(y) > Float::abs(x))
                        {
                            guard_ok = false;
                        }
                    }
                }
                MemberLimits {
                    phi: common.iter().map(|m| f1.phi[m] * c1 + f2.phi[m] * c2).collect(),
                    abar: common.iter().map(|m| f1.abar[m].scale(c1) + f2.abar[m].scale(c2)).collect(),
                    dev: common.iter().map(|m| f1.dev[m].scale(c1) + f2.dev[m].scale(c2)).collect(),
                    guard_ok,
                }
            } else {
                let f = &per_level[0];
                MemberLimits {
                    phi: f.phi.values().copied().collect(),
                    abar: f.abar.values().copied().collect(),
                    dev: f.dev.values().copied().collect(),
                    guard_ok: true,
                }
            };
            side_limits.push(SideLimit {
                side: *side,
                abar: mean_se(&limits.abar, d),
                dev: mean_se(&limits.dev, d),
                phi: scalar_mean_se(&limits.phi),
                members: limits.dev.len(),
                guard_ok: limits.guard_ok,
            });
        }

        // Richardson in L^{-d} on the two largest sides (independent ensembles).
        let ns_ = side_limits.len();
        let combine = |c1: T, c2: T, a: Tensor<T>, b: Tensor<T>| a.scale(c1) + b.scale(c2);
        let combine_se =
            |c1: T, c2: T, a: Tensor<T>, b: Tensor<T>| a.zip_map(&b, |x, y| Float::sqrt(c1 * c1 * x * x + c2 * c2 * y * y));
        let (abar_mean, abar_se, dev_mean, dev_se, phi_mean, phi_se, ok, guard) = if ns_ >= 2 {
            let s1 = &side_limits[ns_ - 2];
            let s2 = &side_limits[ns_ - 1];
            let t1 = Float::powi(s1.side, -(d as i32));
            let t2 = Float::powi(s2.side, -(d as i32));
            let (c1, c2) = richardson_weights(t1, t2);
            (
                combine(c1, c2, s1.abar.0, s2.abar.0),
                combine_se(c1, c2, s1.abar.1, s2.abar.1),
                combine(c1, c2, s1.dev.0, s2.dev.0),
                combine_se(c1, c2, s1.dev.1, s2.dev.1),
                s1.phi.0 * c1 + s2.phi.0 * c2,
                Float::sqrt(c1 * c1 * s1.phi.1 * s1.phi.1 + c2 * c2 * s2.phi.1 * s2.phi.1),
                s1.members.min(s2.members),
                s1.guard_ok && s2.guard_ok,
            )
        } else {
            let s = &side_limits[0];
            (s.abar.0, s.abar.1, s.dev.0, s.dev.1, s.phi.0, s.phi.1, s.members, s.guard_ok)
        };
        let level_rows: Vec<&ReportRow<T>> = rows
            .iter()
            .filter(|r| r.lambda_index == i && r.kind == RowKind::Level)
            .collect();
        let finest = level_rows.last().expect("at least one level row");
        let hat = finest.hat_a2;
        let lambda2_hat = finest.lambda2_hat;
        let eps = dev_mean.operator_norm();
        let eps_se = dev_se.frobenius_norm();
        let total_failed: usize = level_rows.iter().map(|r| r.members_failed).sum();
        rows.push(ReportRow {
            kind: RowKind::Extrapolated,
            lambda_index: i,
            lambda,
            side: None,
            n: None,
            members_ok: ok,
            members_failed: total_failed,
            seed_first: cfg.seed(i, 0, 0),
            seed_last: cfg.seed(i, sides.len() - 1, cfg.ensemble_size - 1),
            phi_mean,
            phi_se,
            lambda2_analytic,
            lambda2_hat,
            abar_mean,
            abar_se,
            cm: a1 + hat.scale(phi_mean),
            hat_a2: hat,
            eps,
            eps_se,
            above_noise: eps > T::lit(3.0) * eps_se,
            flagged: !guard || cfg.ensemble_size < MIN_RECOMMENDED_ENSEMBLE,
        });
    }
    rows.sort_by_key(|r| (r.lambda_index, r.kind == RowKind::Extrapolated));

    let mut report = DiluteSweepReport {
        config: cfg.clone(),
        corrections,
        rows,
        fit: ScalingFit::Inconclusive {
            reason: String::new(),
            points_above_noise: 0,
        },
        members_total,
        members_failed,
        elapsed_seconds: 0.0,
    };
    report.fit = fit_error_scaling(&report);
    report.elapsed_seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Rows used for scaling and tables: extrapolated ones.
pub fn limit_rows<T: Real>(report: &DiluteSweepReport<T>) -> Vec<&ReportRow<T>> {
    report.rows.iter().filter(|r| r.kind == RowKind::Extrapolated).collect()
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, R²)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, b, r2)
}

/// `λ₂ |log λ₂|`.
pub fn lambda2_log<T: Real>(lambda2: T) -> T {
    lambda2 * Float::abs(Float::ln(lambda2))
}

/// Fits `log ε = log C + s log(λ₂ |log λ₂|)` on the extrapolated rows above
/// the noise floor; fewer than three such rows give an inconclusive result.
pub fn fit_error_scaling<T: Real>(report: &DiluteSweepReport<T>) -> ScalingFit {
    fit_rows(&limit_rows(report))
}

pub fn fit_rows<T: Real>(rows: &[&ReportRow<T>]) -> ScalingFit {
    let usable: Vec<&&ReportRow<T>> = rows
        .iter()
        .filter(|r| r.above_noise && r.eps > T::zero() && r.lambda2().is_some_and(|l| l > T::zero() && l < T::one()))
        .collect();
    if usable.len() < 3 {
        return ScalingFit::Inconclusive {
            reason: format!(
                "{} of {} intensity levels are above the noise floor; need 3",
                usable.len(),
                rows.len()
            ),
            points_above_noise: usable.len(),
        };
    }
    let x: Vec<f64> = usable
        .iter()
        .map(|r| lambda2_log(r.lambda2().expect("filtered")).to_f64_lossy().ln())
        .collect();
    let y: Vec<f64> = usable.iter().map(|r| r.eps.to_f64_lossy().ln()).collect();
    let xp: Vec<f64> = usable.iter().map(|r| r.phi_mean.to_f64_lossy().ln()).collect();
    let (a, slope, r2) = least_squares(&x, &y);
    let (_, phi_exponent, _) = least_squares(&xp, &y);
    ScalingFit::Fit {
        slope,
        constant: a.exp(),
        r2,
        phi_exponent,
        points: usable.len(),
    }
}

/// One line of the Clausius–Mossotti comparison.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CmGapRow {
    pub lambda: f64,
    pub phi: f64,
    pub abar_11: f64,
    pub cm_11: f64,
    pub eps: f64,
    pub eps_over_lambda2_log: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct CmGapTable {
    pub rows: Vec<CmGapRow>,
}

const GAP_HEADER: [&str; 6] = ["lambda", "phi", "abar_11", "cm_11", "eps", "eps_over_lambda2_log"];

impl CmGapTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(GAP_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record(
                [r.lambda, r.phi, r.abar_11, r.cm_11, r.eps, r.eps_over_lambda2_log].map(|v| format!("{v:.16e}")),
            )
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII CSV")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for h in GAP_HEADER {
            let _ = write!(s, "{h:>22}");
        }
        s.push('\n');
        for r in &self.rows {
            for v in [r.lambda, r.phi, r.abar_11, r.cm_11, r.eps, r.eps_over_lambda2_log] {
                let _ = write!(s, "{v:>22.6e}");
            }
            s.push('\n');
        }
        s
    }
}

/// Per-intensity comparison of `Ā₁₁` with the closed-form or numeric prediction.
pub fn cm_gap_table<T: Real>(report: &DiluteSweepReport<T>) -> CmGapTable {
    let rows = limit_rows(report)
        .into_iter()
        .map(|r| CmGapRow {
            lambda: r.lambda.to_f64_lossy(),
            phi: r.phi_mean.to_f64_lossy(),
            abar_11: r.abar_mean.get(0, 0).to_f64_lossy(),
            cm_11: r.cm.get(0, 0).to_f64_lossy(),
            eps: r.eps.to_f64_lossy(),
            eps_over_lambda2_log: r
                .lambda2()
                .map_or(f64::NAN, |l| (r.eps / lambda2_log(l)).to_f64_lossy()),
        })
        .collect();
    CmGapTable { rows }
}

/// Report CSV column names for dimension `d`, in order.
pub fn csv_columns(d: usize) -> Vec<String> {
    let mut cols: Vec<String> = [
        "kind",
        "lambda_index",
        "lambda",
        "L",
        "N",
        "members_ok",
        "members_failed",
        "seed_first",
        "seed_last",
        "phi_mean",
        "phi_se",
        "lambda2_analytic",
        "lambda2_hat",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["abar", "abar_se", "cm", "hat_a2"] {
        for i in 1..=d {
            for j in 1..=d {
                cols.push(format!("{prefix}_{i}{j}"));
            }
        }
    }
    for s in ["eps", "eps_se", "eps_over_phi", "above_noise", "flagged"] {
        cols.push(s.to_string());
    }
    cols
}

impl<T: Real> DiluteSweepReport<T> {
    pub fn to_csv(&self) -> String {
        let d = self.config.d;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(csv_columns(d)).expect("in-memory write");
        let opt = |v: Option<T>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for r in &self.rows {
            let mut f: Vec<String> = vec![
                match r.kind {
                    RowKind::Level => "level".into(),
                    RowKind::Extrapolated => "extrapolated".into(),
                },
                r.lambda_index.to_string(),
                format!("{:.16e}", r.lambda),
                r.side.map_or("inf".into(), |v| v.to_string()),
                r.n.map_or("inf".into(), |v| v.to_string()),
                r.members_ok.to_string(),
                r.members_failed.to_string(),
                r.seed_first.to_string(),
                r.seed_last.to_string(),
                format!("{:.16e}", r.phi_mean),
                format!("{:.16e}", r.phi_se),
                opt(r.lambda2_analytic),
                opt(r.lambda2_hat),
            ];
            for m in [&r.abar_mean, &r.abar_se, &r.cm, &r.hat_a2] {
                f.extend(m.to_row_major().iter().map(|v| format!("{v:.16e}")));
            }
            f.push(format!("{:.16e}", r.eps));
            f.push(format!("{:.16e}", r.eps_se));
            f.push(format!("{:.16e}", r.eps_over_phi()));
            f.push(r.above_noise.to_string());
            f.push(r.flagged.to_string());
            w.write_record(&f).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII CSV")
    }
}

/// Reads a report CSV into header names and string cells.
pub fn read_csv_table(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let parse = |e: csv::Error| Error::Parse {
        line: e.position().map_or(0, |p| p.line() as usize),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(parse)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(parse)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
