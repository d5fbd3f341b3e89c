use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ddpm_core::experiments::{
    self, perturbation_slope, perturbation_trajectories, rate_slope, validate::run_validate, CoveringConfig,
    CsvRecord, DumpConfig, Figure1Config, KvConfig, PerturbConfig, RateConfig, Theorem2Config,
};
use ddpm_core::Error;

#[derive(Parser)]
#[command(name = "ddpm-lab", version, about = "Dimension-dependence experiments for DDPM samplers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// CSV destination (stdout when omitted).
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Master seed for commands that draw random numbers.
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Print beta, alpha, alpha_bar and the design coefficients per step.
    DumpSchedule(Common),
    /// KL and TV between q_1 and p_1 over designs, step counts and dimensions.
    Figure1(Common),
    /// Per-step KL against its dimension-linear lower bound.
    Theorem2(Common),
    /// Exact KL as a function of T, with the log-log slope.
    Rate(Common),
    /// TV of the sampled Y_1 law under score perturbations.
    Perturb {
        #[command(flatten)]
        common: Common,
        /// Also write per-step trajectories of the first run.
        #[arg(long, value_name = "PATH")]
        trajectory_out: Option<PathBuf>,
        /// Number of trajectories to record.
        #[arg(long, value_name = "N", default_value_t = 16)]
        trajectory_count: usize,
    },
    /// Greedy epsilon-net and intrinsic dimension estimate of a point cloud.
    Covering(Common),
    /// Run every invariant check and report pass/fail.
    Validate(Common),
}

enum Failure {
    Config(Error),
    Validation,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load(common: &Common, seeded: bool) -> Result<KvConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => KvConfig::from_file(path)?,
        None => KvConfig::new(),
    };
    for pair in &common.overrides {
        cfg.set_pair(pair)?;
    }
    if let (true, Some(seed)) = (seeded, common.seed) {
        cfg.set("seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|source| Error::Io { path: p.to_path_buf(), source })?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit<R: CsvRecord>(common: &Common, rows: &[R]) -> Result<(), Error> {
    experiments::write_csv(open_out(common.out.as_deref())?, rows)
}

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Error>
where
    T: Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::DumpSchedule(common) => {
            let cfg = DumpConfig::from_kv(load(&common, false)?)?;
            emit(&common, &experiments::dump_schedule(&cfg)?)?;
        }
        Command::Figure1(common) => {
            let cfg = Figure1Config::from_kv(load(&common, true)?)?;
            let rows = with_threads(common.threads, || experiments::run_figure1_sweep(&cfg))?;
            emit(&common, &rows)?;
        }
        Command::Theorem2(common) => {
            let cfg = Theorem2Config::from_kv(load(&common, false)?)?;
            let rows = with_threads(common.threads, || experiments::run_theorem2_grid(&cfg))??;
            let worst = rows.iter().filter(|r| r.error.is_none()).map(|r| r.difference).fold(f64::INFINITY, f64::min);
            eprintln!("min difference: {worst:e}");
            emit(&common, &rows)?;
        }
        Command::Rate(common) => {
            let cfg = RateConfig::from_kv(load(&common, false)?)?;
            let rows = with_threads(common.threads, || experiments::run_rate_sweep(&cfg))?;
            match rate_slope(&rows) {
                Some(s) => eprintln!("slope of log KL vs log T: {s:.6}"),
                None => eprintln!("slope of log KL vs log T: undefined"),
            }
            emit(&common, &rows)?;
        }
        Command::Perturb { common, trajectory_out, trajectory_count } => {
            let cfg = PerturbConfig::from_kv(load(&common, true)?)?;
            let rows = with_threads(common.threads, || experiments::run_perturbation_sweep(&cfg))??;
            if let Some(s) = perturbation_slope(&rows) {
                eprintln!("slope of TV vs eps: {s:.6}");
            }
            emit(&common, &rows)?;
            if let Some(path) = trajectory_out {
                let eps = cfg.eps.first().copied().unwrap_or(0.0);
                let traj =
                    with_threads(common.threads, || perturbation_trajectories(&cfg, eps, trajectory_count))??;
                traj.write_csv(open_out(Some(&path))?)?;
            }
        }
        Command::Covering(common) => {
            let cfg = CoveringConfig::from_kv(load(&common, false)?)?;
            let result = with_threads(common.threads, || experiments::run_covering(&cfg))??;
            eprintln!(
                "{} points, net size {} at eps {:e}, estimate {:.6}",
                result.cloud_size,
                result.net.len(),
                result.net.eps,
                result.estimate
            );
            emit(&common, &result.rows())?;
        }
        Command::Validate(common) => {
            load(&common, false)?.finish()?;
            let report = with_threads(common.threads, run_validate)?;
            let text = format!("{report}\n");
            let mut out = open_out(common.out.as_deref())?;
            out.write_all(text.as_bytes()).map_err(|source| Error::Io { path: "<report>".into(), source })?;
            out.flush().map_err(|source| Error::Io { path: "<report>".into(), source })?;
            if !report.passed() {
                return Err(Failure::Validation);
            }
        }
    }
    Ok(())
}
