use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use dilute_homog::corrector::{effective_tensor, solve_all, SolverConfig};
use dilute_homog::experiment::{
    cm_gap_table, run_sweep, DiluteSweepReport, MemberRecord, ScalingFit, SweepConfig, SweepOptions,
};
use dilute_homog::microstructure::{GeometryReport, GridField, Lambda2Config, VolumeFractionMethod};
use dilute_homog::point_process::{analytic_contact_scale, PointSample, ProcessSpec, TorusSpec};
use dilute_homog::single_inclusion::PhaseModel;
use dilute_homog::{Error, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::Draft;
use crate::{plot, Failure, PlotArgs, SampleArgs, SolveArgs, SweepArgs};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::io(format!("cannot create {}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report values serialize");
    s.push('\n');
    s
}

fn path_str(p: &Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleConfig {
    d: usize,
    #[serde(rename = "L")]
    side: f64,
    process: ProcessSpec<f64>,
    #[serde(default)]
    seed: u64,
    #[serde(default = "one")]
    count: usize,
    /// Cells per side for the volume fraction; default `max(64, ⌈4L⌉)`.
    #[serde(default)]
    raster_n: Option<usize>,
    #[serde(default)]
    out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

pub fn sample(args: &SampleArgs, verbose: u8) -> Result<(), Failure> {
    let mut draft = Draft::load(args.config.as_deref())?;
    if let Some(kind) = &args.process {
        draft.set(&["process"], json!({ "kind": kind }));
    }
    draft.set_opt(&["process", "lambda"], args.lambda);
    draft.set_opt(&["process", "lambda_parent"], args.lambda_parent);
    draft.set_opt(&["process", "r_hard"], args.r_hard);
    draft.set_opt(&["process", "spacing"], args.spacing);
    draft.set_opt(&["process", "jitter"], args.jitter);
    draft.set_opt(&["L"], args.side);
    draft.set_opt(&["d"], args.d);
    draft.set_opt(&["seed"], args.seed);
    draft.set_opt(&["count"], args.count);
    draft.set_opt(&["raster_n"], args.raster_n);
    if let Some(out) = &args.out {
        draft.set(&["out"], path_str(out));
    }
    let cfg: SampleConfig = draft.finish()?;
    cfg.process.validate()?;
    let torus = TorusSpec::new(cfg.d, cfg.side)?;
    if cfg.count == 0 {
        return Err(Error::config("count", "must be at least 1").into());
    }
    let raster_n = cfg.raster_n.unwrap_or_else(|| 64usize.max((4.0 * cfg.side).ceil() as usize));
    GridField::check_resolution(&torus, raster_n)?;

    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("."));
    create_dir(&out)?;
    let lambda2_cfg = Lambda2Config::default();
    let contact = analytic_contact_scale(&cfg.process);
    let mut table = String::from(GeometryReport::<f64>::csv_header());
    table.push('\n');
    for k in 0..cfg.count {
        let seed = cfg
            .seed
            .checked_add(k as u64)
            .ok_or_else(|| Failure::config("seed: seed + count overflows"))?;
        let s = cfg.process.sample(&torus, seed)?;
        let report = GeometryReport::compute(&s, VolumeFractionMethod::Raster { n: raster_n }, &lambda2_cfg, contact)?;
        let txt = out.join(format!("sample_{seed}.txt"));
        write_file(&txt, s.to_text())?;
        write_file(&out.join(format!("sample_{seed}.geom")), report.to_kv_text())?;
        table.push_str(&report.csv_row());
        table.push('\n');
        println!(
            "{}  points {}  clusters {}  singletons {}  phi {:.6e}",
            txt.display(),
            report.points,
            report.clusters.len(),
            report.singletons(),
            report.volume_fraction
        );
        if verbose > 0 {
            eprintln!("sample {} of {} done (seed {seed})", k + 1, cfg.count);
        }
    }
    write_file(&out.join("geometry.csv"), table)
}

/// Microstructure for a single solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum Geometry {
    /// Point sample text file.
    SampleFile { path: PathBuf },
    /// Fresh sample drawn from `process`.
    Process { process: ProcessSpec<f64>, seed: u64 },
    /// Stripes normal to `axis`; `period` and `width` count cells.
    Laminate {
        #[serde(default)]
        axis: usize,
        period: usize,
        width: usize,
    },
    Homogeneous,
    /// Binary phase field dump.
    FieldFile { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveConfig {
    geometry: Geometry,
    #[serde(default)]
    d: Option<usize>,
    #[serde(rename = "L", default)]
    side: Option<f64>,
    #[serde(rename = "N", default)]
    n: Option<usize>,
    #[serde(default)]
    phases: Option<PhaseModel<f64>>,
    /// Isotropic shortcut for `phases`.
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    beta: Option<f64>,
    #[serde(default)]
    solver: SolverConfig<f64>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    dump_gradients: Option<PathBuf>,
}

impl SolveConfig {
    fn phases(&self, d: usize) -> Result<Option<PhaseModel<f64>>, Failure> {
        match (&self.phases, self.alpha, self.beta) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => {
                Err(Error::config("phases", "give either phases or alpha/beta, not both").into())
            }
            (Some(p), None, None) => Ok(Some(*p)),
            (None, Some(a), Some(b)) => Ok(Some(PhaseModel::isotropic(a, b, d)?)),
            (None, None, None) => Ok(None),
            _ => Err(Error::config("alpha", "alpha and beta must be given together").into()),
        }
    }

    fn required<T: Copy>(v: Option<T>, name: &str) -> Result<T, Failure> {
        v.ok_or_else(|| Error::config(name, "required for this geometry").into())
    }

    /// Builds the phase field and, for point geometries, the sample.
    fn field(&self) -> Result<(GridField<f64>, Option<PointSample<f64>>), Failure> {
        let need_phases = |d| self.phases(d)?.ok_or_else(|| Failure::from(Error::config("phases", "missing; give phases or alpha and beta")));
        let torus = || -> Result<TorusSpec<f64>, Failure> {
            Ok(TorusSpec::new(Self::required(self.d, "d")?, Self::required(self.side, "L")?)?)
        };
        let n = || Self::required(self.n, "N");
        match &self.geometry {
            Geometry::SampleFile { path } => {
                let s = PointSample::read_text(open(path)?)?;
                self.check_matches(&s.torus)?;
                let f = GridField::rasterize(&s, need_phases(s.dim())?, n()?)?;
                Ok((f, Some(s)))
            }
            Geometry::Process { process, seed } => {
                let t = torus()?;
                let s = process.sample(&t, *seed)?;
                let f = GridField::rasterize(&s, need_phases(t.d)?, n()?)?;
                Ok((f, Some(s)))
            }
            Geometry::Laminate { axis, period, width } => {
                let t = torus()?;
                Ok((GridField::laminate(t, n()?, need_phases(t.d)?, *axis, *period, *width)?, None))
            }
            Geometry::Homogeneous => {
                let t = torus()?;
                Ok((GridField::homogeneous(t, n()?, need_phases(t.d)?)?, None))
            }
            Geometry::FieldFile { path } => {
                let mut f = GridField::read_binary(open(path)?)?;
                self.check_matches(&f.torus)?;
                if let Some(n) = self.n {
                    if n != f.n() {
                        return Err(Error::config("N", format!("field file has N = {}, config says {n}", f.n())).into());
                    }
                }
                if let Some(p) = self.phases(f.dim())? {
                    f = f.with_phases(p)?;
                }
                Ok((f, None))
            }
        }
    }

    fn check_matches(&self, t: &TorusSpec<f64>) -> Result<(), Failure> {
        if self.d.is_some_and(|d| d != t.d) {
            return Err(Error::config("d", format!("input file has d = {}", t.d)).into());
        }
        if self.side.is_some_and(|l| l != t.side) {
            return Err(Error::config("L", format!("input file has L = {}", t.side)).into());
        }
        Ok(())
    }
}

fn format_tensor(a: &Tensor<f64>) -> String {
    let mut s = String::new();
    for i in 0..a.dim() {
        let row: Vec<String> = (0..a.dim()).map(|j| format!("{:>22.14e}", a.get(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn solve(args: &SolveArgs, verbose: u8) -> Result<(), Failure> {
    let mut draft = Draft::load(args.config.as_deref())?;
    if let Some(p) = &args.sample {
        draft.set(&["geometry"], json!({"kind": "sample_file", "path": path_str(p)}));
    }
    if let Some(p) = &args.field {
        if args.sample.is_some() {
            return Err(Failure::config("--sample and --field are exclusive"));
        }
        draft.set(&["geometry"], json!({"kind": "field_file", "path": path_str(p)}));
    }
    draft.set_opt(&["N"], args.n);
    if args.alpha.is_some() || args.beta.is_some() {
        if let Some(Value::Object(m)) = draft.get(&["phases"]) {
            if !m.is_empty() {
                // Flags win over phases from the file.
                draft.set(&["phases"], Value::Null);
            }
        }
    }
    draft.set_opt(&["alpha"], args.alpha);
    draft.set_opt(&["beta"], args.beta);
    draft.set_opt(&["solver", "scheme"], args.scheme.clone());
    draft.set_opt(&["solver", "tol"], args.tol);
    draft.set_opt(&["solver", "max_iter"], args.max_iter);
    draft.set_opt(&["solver", "alpha0"], args.alpha0);
    if let Some(p) = &args.out {
        draft.set(&["out"], path_str(p));
    }
    if let Some(p) = &args.dump_gradients {
        draft.set(&["dump_gradients"], path_str(p));
    }
    let cfg: SolveConfig = draft.finish()?;
    cfg.solver.validate()?;
    let (field, sample) = cfg.field()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("solve.json"));

    let mut doc = json!({
        "config": cfg,
        "d": field.dim(),
        "L": field.torus.side,
        "N": field.n(),
        "phases": field.phases,
        "phi": field.volume_fraction(),
        "points": sample.as_ref().map(PointSample::len),
    });
    if verbose > 0 {
        eprintln!("solving d = {} N = {} phi = {:.6e}", field.dim(), field.n(), field.volume_fraction());
    }
    let result = if cfg.dump_gradients.is_some() {
        solve_all(&field, &cfg.solver)
    } else {
        effective_tensor(&field, &cfg.solver)
    };
    let sol = match result {
        Ok(s) => s,
        Err(Error::NonConvergence {
            iterations,
            residual,
            history,
        }) => {
            let obj = doc.as_object_mut().expect("object literal");
            obj.insert("status".into(), json!("non_convergence"));
            obj.insert("iterations".into(), json!(iterations));
            obj.insert("final_residual".into(), json!(residual));
            obj.insert("residual_history".into(), json!(history));
            obj.insert("generated_at_unix".into(), json!(unix_now()));
            write_file(&out, pretty(&doc))?;
            return Err(Error::NonConvergence {
                iterations,
                residual,
                history: Vec::new(),
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(base) = &cfg.dump_gradients {
        for dir in &sol.directions {
            let mut name = base.as_os_str().to_owned();
            name.push(format!("_e{}", dir.direction));
            let path = PathBuf::from(name);
            let mut buf = Vec::new();
            field.write_vector_field(&mut buf, &dir.gradient)?;
            write_file(&path, buf)?;
        }
    }
    let obj = doc.as_object_mut().expect("object literal");
    obj.insert("status".into(), json!("converged"));
    if let Value::Object(rec) = serde_json::to_value(sol.record()).expect("record serializes") {
        obj.extend(rec);
    }
    obj.insert("generated_at_unix".into(), json!(unix_now()));
    write_file(&out, pretty(&doc))?;
    print!("Abar =\n{}", format_tensor(&sol.abar));
    Ok(())
}

fn fit_summary(fit: &ScalingFit) -> String {
    match fit {
        ScalingFit::Fit {
            slope,
            constant,
            r2,
            phi_exponent,
            points,
        } => format!(
            "fit: eps ~ {constant:.4e} (lambda2 |log lambda2|)^{slope:.4}  (R^2 {r2:.4}, {points} points); eps ~ phi^{phi_exponent:.4}"
        ),
        ScalingFit::Inconclusive { reason, .. } => format!("fit: inconclusive ({reason})"),
    }
}

pub fn sweep(args: &SweepArgs, verbose: u8) -> Result<(), Failure> {
    let mut draft = Draft::load(Some(&args.config))?;
    draft.set_opt(&["seed_base"], args.seed);
    draft.set_opt(&["ensemble_size"], args.ensemble_size);
    let cfg: SweepConfig<f64> = draft.finish()?;
    cfg.validate()?;
    create_dir(&args.out)?;

    let total = cfg.intensities.len() * cfg.sides_with_resolutions().len() * cfg.ensemble_size;
    let done = AtomicUsize::new(0);
    let progress = |r: &MemberRecord| {
        let k = done.fetch_add(1, Ordering::Relaxed) + 1;
        if verbose > 0 {
            let status = r.error.as_deref().unwrap_or("ok");
            eprintln!(
                "[{k}/{total}] lambda #{} L {} member {} seed {}: {status}",
                r.lambda_index, r.side, r.member, r.seed
            );
        }
    };
    let opts = SweepOptions {
        checkpoint: Some(args.out.join("checkpoint.jsonl")),
        resume: args.resume,
        progress: Some(&progress),
    };
    let report: DiluteSweepReport<f64> = run_sweep(&cfg, &opts)?;
    if args.resume && verbose > 0 {
        eprintln!("{} members computed, {} taken from the checkpoint", done.load(Ordering::Relaxed), total - done.load(Ordering::Relaxed));
    }

    let csv = report.to_csv();
    write_file(&args.out.join("report.csv"), &csv)?;
    let mut doc = serde_json::to_value(&report).expect("report serializes");
    doc.as_object_mut()
        .expect("report is an object")
        .insert("generated_at_unix".into(), json!(unix_now()));
    write_file(&args.out.join("report.json"), pretty(&doc))?;
    let gap = cm_gap_table(&report);
    write_file(&args.out.join("cm_gap.csv"), gap.to_csv())?;
    let text = gap.to_text();
    write_file(&args.out.join("cm_gap.txt"), &text)?;
    print!("{text}");
    println!("{}", fit_summary(&report.fit));
    if report.members_failed > 0 {
        println!("{} of {} members failed and were excluded", report.members_failed, report.members_total);
    }
    if args.plot {
        for p in plot::write_figures(&csv, &args.out)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

pub fn plot(args: &PlotArgs) -> Result<(), Failure> {
    let csv = fs::read_to_string(&args.csv).map_err(|e| Failure::io(format!("cannot read {}: {e}", args.csv.display())))?;
    create_dir(&args.out)?;
    for p in plot::write_figures(&csv, &args.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
