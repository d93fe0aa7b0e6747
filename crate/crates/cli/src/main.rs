mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dilute_homog::Error;

const THREADS_ENV: &str = "DILUTE_HOMOG_THREADS";

#[derive(Parser)]
#[command(name = "dilute-homog", version, about = "Dilute-limit homogenization experiments on the torus")]
struct Cli {
    /// Worker threads (default: DILUTE_HOMOG_THREADS, else logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Progress on stderr; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw point samples and write their geometry reports.
    Sample(SampleArgs),
    /// Solve the corrector problem on one microstructure.
    Solve(SolveArgs),
    /// Run a dilute sweep and write the report.
    Sweep(SweepArgs),
    /// Redraw the SVG figures from a report CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct SampleArgs {
    /// JSON config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// poisson, matern2 or jittered_lattice.
    #[arg(long)]
    pub process: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda_parent: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub r_hard: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub spacing: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub jitter: Option<f64>,
    /// Torus side in inclusion radii.
    #[arg(long = "L", allow_negative_numbers = true)]
    pub side: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of samples, seeds `seed, seed+1, ...`.
    #[arg(long)]
    pub count: Option<usize>,
    /// Cells per side for the raster volume fraction.
    #[arg(long)]
    pub raster_n: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Point sample file; sets the geometry.
    #[arg(long)]
    pub sample: Option<PathBuf>,
    /// Binary phase field file; sets the geometry.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    /// Isotropic matrix conductivity.
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Isotropic inclusion conductivity.
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// conjugate_gradient or fixed_point.
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha0: Option<f64>,
    /// Output JSON record.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Writes the corrector gradient for direction k to `PATH_e{k}`.
    #[arg(long)]
    pub dump_gradients: Option<PathBuf>,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `seed_base`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "sweep_out")]
    pub out: PathBuf,
    /// Reuse members found in the checkpoint of a previous run.
    #[arg(long)]
    pub resume: bool,
    /// Also write the SVG figures.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Error carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 2,
            Error::NonConvergence { .. } | Error::SweepFailed { .. } => 3,
            _ => 1,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Failure::config(format!("{THREADS_ENV}: expected a thread count, got {v:?}")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Failure::config("threads: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("threads: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = init_threads(cli.threads).and_then(|()| match &cli.command {
        Command::Sample(a) => commands::sample(a, cli.verbose),
        Command::Solve(a) => commands::solve(a, cli.verbose),
        Command::Sweep(a) => commands::sweep(a, cli.verbose),
        Command::Plot(a) => commands::plot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
