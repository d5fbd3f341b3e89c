//! Experiment sweeps, CSV emission and the validation suite.
//!
//! Every sweep is a pure function of its configuration and master seed. Grid
//! points are seeded with `derive_seed(master, label_key(label))`, where
//! `label` spells out the point's parameters, so reordering a grid never
//! changes a row. Grid points run in parallel; rows are returned in grid
//! order.
//!
//! CSV floats are written with 17 significant digits in `{:e}` notation.

pub mod config;
pub mod validate;

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;

pub use config::{KvConfig, ScheduleSpec};

use crate::analytic::{
    chain_kl_upper_bound, conditional_step_kl_split, diag_gaussian_kl, forward_marginal_law, propagate_reverse_law,
    step_kl_lower_bound,
};
use crate::covering::{grid_cloud, intrinsic_dim_with_net, greedy_epsilon_net, EpsilonNet, PointCloud};
use crate::error::{Error, Result};
use crate::metrics::{mc_tv_diag, mc_tv_diag_gaussians, DiagGaussian};
use crate::oracle::least_squares_slope;
use crate::sampler::{run_reverse, ReverseRunConfig, Trajectory};
use crate::schedules::{DesignKind, Schedule};
use crate::seed::{derive_seed, label_key};
use crate::targets::{PerturbationModel, ScoreOracle, Target};

/// CSV float formatting: 17 significant digits, `.` decimal point.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: f64, failed: bool) -> String {
    if failed {
        String::new()
    } else {
        fmt_f64(v)
    }
}

/// A record type with a fixed CSV schema.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

pub fn write_csv<W: Write, R: CsvRecord>(out: W, records: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(R::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(|source| Error::Io { path: PathBuf::from("<csv>"), source })?;
    Ok(())
}

pub fn to_csv_string<R: CsvRecord>(records: &[R]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn seed_for(master: u64, label: &str) -> u64 {
    derive_seed(master, label_key(label))
}

// ---------------------------------------------------------------------------
// dump-schedule

#[derive(Debug, Clone, PartialEq)]
pub struct DumpConfig {
    pub schedule: ScheduleSpec,
    pub steps: usize,
    pub design: DesignKind,
}

impl Default for DumpConfig {
    fn default() -> Self {
        Self { schedule: ScheduleSpec::paper(), steps: 1000, design: DesignKind::Star }
    }
}

impl DumpConfig {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            schedule: ScheduleSpec::take(&mut cfg, d.schedule)?,
            steps: cfg.take("T", d.steps)?,
            design: cfg.take("design", d.design)?,
        };
        cfg.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub t: usize,
    pub beta: f64,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub eta: f64,
    pub sigma2: f64,
}

impl CsvRecord for ScheduleRow {
    const HEADER: &'static [&'static str] = &["t", "beta", "alpha", "alpha_bar", "eta", "sigma2"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            fmt_f64(self.beta),
            fmt_f64(self.alpha),
            fmt_f64(self.alpha_bar),
            fmt_f64(self.eta),
            fmt_f64(self.sigma2),
        ]
    }
}

pub fn dump_schedule(cfg: &DumpConfig) -> Result<Vec<ScheduleRow>> {
    let s = cfg.schedule.build(cfg.steps)?;
    let design = cfg.design.build(&s);
    Ok((1..=s.steps())
        .map(|t| ScheduleRow {
            t,
            beta: s.beta(t),
            alpha: s.alpha(t),
            alpha_bar: s.alpha_bar(t),
            eta: design.eta(t),
            sigma2: design.sigma2(t),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// figure1

#[derive(Debug, Clone, PartialEq)]
pub struct Figure1Config {
    pub schedule: ScheduleSpec,
    pub steps: Vec<usize>,
    pub dims: Vec<usize>,
    pub k: usize,
    pub designs: Vec<DesignKind>,
    pub seed: u64,
    pub tv_samples: usize,
    /// Write wall-clock runtimes; off makes the CSV byte-reproducible.
    pub timing: bool,
}

impl Default for Figure1Config {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::linear(),
            steps: vec![100, 200, 500, 1000],
            dims: vec![10, 20, 50, 100, 200, 500, 1000],
            k: 8,
            designs: vec![DesignKind::Star, DesignKind::Simple],
            seed: 0,
            tv_samples: 200_000,
            timing: true,
        }
    }
}

impl Figure1Config {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            schedule: ScheduleSpec::take(&mut cfg, d.schedule)?,
            steps: cfg.take_list("T", d.steps)?,
            dims: cfg.take_list("d", d.dims)?,
            k: cfg.take("k", d.k)?,
            designs: cfg.take_list("designs", d.designs)?,
            seed: cfg.take("seed", d.seed)?,
            tv_samples: cfg.take("tv_samples", d.tv_samples)?,
            timing: cfg.take("timing", d.timing)?,
        };
        cfg.finish()?;
        Ok(out)
    }
}

/// One grid point of a sweep over designs, step counts and dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub design_name: String,
    pub schedule_name: String,
    pub steps: usize,
    pub d: usize,
    pub k: usize,
    pub eps_score: f64,
    pub seed: u64,
    pub kl_exact: f64,
    pub tv_estimate: f64,
    pub tv_stderr: f64,
    pub step_kl_sum: f64,
    pub init_kl: f64,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

impl CsvRecord for SweepRecord {
    const HEADER: &'static [&'static str] = &[
        "design_name",
        "schedule_name",
        "T",
        "d",
        "k",
        "eps_score",
        "seed",
        "kl_exact",
        "tv_estimate",
        "tv_stderr",
        "step_kl_sum",
        "init_kl",
        "runtime_ms",
        "error",
    ];

    fn fields(&self) -> Vec<String> {
        let failed = self.error.is_some();
        vec![
            self.design_name.clone(),
            self.schedule_name.clone(),
            self.steps.to_string(),
            self.d.to_string(),
            self.k.to_string(),
            fmt_f64(self.eps_score),
            self.seed.to_string(),
            fmt_opt(self.kl_exact, failed),
            fmt_opt(self.tv_estimate, failed),
            fmt_opt(self.tv_stderr, failed),
            fmt_opt(self.step_kl_sum, failed),
            fmt_opt(self.init_kl, failed),
            fmt_f64(self.runtime_ms),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Exact metrics of one `(schedule, design, k, d)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactPoint {
    pub kl_exact: f64,
    pub step_kl_sum: f64,
    pub init_kl: f64,
}

pub fn exact_point(schedule: &Schedule, design: DesignKind, k: usize, d: usize) -> Result<ExactPoint> {
    let coeffs = design.build(schedule);
    let q1 = forward_marginal_law(schedule, 1, k, d)?;
    let p1 = propagate_reverse_law(schedule, &coeffs, k, d, 1)?;
    let chain = chain_kl_upper_bound(schedule, &coeffs, k, d)?;
    Ok(ExactPoint { kl_exact: diag_gaussian_kl(&q1, &p1)?, step_kl_sum: chain.step_sum, init_kl: chain.init_kl })
}

pub fn run_figure1_sweep(cfg: &Figure1Config) -> Vec<SweepRecord> {
    let mut grid = Vec::new();
    for &design in &cfg.designs {
        for &steps in &cfg.steps {
            for &d in &cfg.dims {
                grid.push((design, steps, d));
            }
        }
    }
    grid.into_par_iter()
        .map(|(design, steps, d)| {
            let label = format!("figure1/{}/{}/T={steps}/d={d}/k={}", design, cfg.schedule.name(), cfg.k);
            let seed = seed_for(cfg.seed, &label);
            let start = Instant::now();
            let outcome = (|| -> Result<(ExactPoint, f64, f64)> {
                let s = cfg.schedule.build(steps)?;
                let exact = exact_point(&s, design, cfg.k, d)?;
                let q1 = forward_marginal_law(&s, 1, cfg.k, d)?;
                let p1 = propagate_reverse_law(&s, &design.build(&s), cfg.k, d, 1)?;
                let tv = mc_tv_diag_gaussians(&q1, &p1, cfg.tv_samples, seed)?;
                Ok((exact, tv.value, tv.stderr))
            })();
            let runtime_ms = if cfg.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            let mut rec = SweepRecord {
                design_name: design.name().into(),
                schedule_name: cfg.schedule.name().into(),
                steps,
                d,
                k: cfg.k,
                eps_score: 0.0,
                seed,
                kl_exact: f64::NAN,
                tv_estimate: f64::NAN,
                tv_stderr: f64::NAN,
                step_kl_sum: f64::NAN,
                init_kl: f64::NAN,
                runtime_ms,
                error: None,
            };
            match outcome {
                Ok((exact, tv, se)) => {
                    rec.kl_exact = exact.kl_exact;
                    rec.step_kl_sum = exact.step_kl_sum;
                    rec.init_kl = exact.init_kl;
                    rec.tv_estimate = tv;
                    rec.tv_stderr = se;
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            rec
        })
        .collect()
}

// ---------------------------------------------------------------------------
// theorem2

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Config {
    pub schedule: ScheduleSpec,
    pub steps: usize,
    pub d: usize,
    pub k: usize,
    /// Steps to evaluate; empty means `{2, T/2, T}`.
    pub ts: Vec<usize>,
    pub eta_shifts: Vec<f64>,
    pub sigma_scales: Vec<f64>,
}

/// `count` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// `count` geometrically spaced values on `[lo, hi]`.
pub fn geomspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect(),
    }
}

impl Default for Theorem2Config {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::linear(),
            steps: 1000,
            d: 64,
            k: 8,
            ts: Vec::new(),
            eta_shifts: linspace(-0.05, 0.05, 21),
            sigma_scales: geomspace(0.5, 2.0, 21),
        }
    }
}

impl Theorem2Config {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let schedule = ScheduleSpec::take(&mut cfg, d.schedule)?;
        let steps = cfg.take("T", d.steps)?;
        let dim = cfg.take("d", d.d)?;
        let k = cfg.take("k", d.k)?;
        let ts = cfg.take_list("t", Vec::new())?;
        let eta_shifts = linspace(
            cfg.take("eta_shift_min", -0.05)?,
            cfg.take("eta_shift_max", 0.05)?,
            cfg.take("eta_shift_count", 21)?,
        );
        let sigma_scales = geomspace(
            cfg.take("sigma_scale_min", 0.5)?,
            cfg.take("sigma_scale_max", 2.0)?,
            cfg.take("sigma_scale_count", 21)?,
        );
        cfg.finish()?;
        if 2 * k > dim {
            return Err(Error::Config(format!("the lower bound needs k <= d/2, got k={k}, d={dim}")));
        }
        Ok(Self { schedule, steps, d: dim, k, ts, eta_shifts, sigma_scales })
    }

    pub fn steps_to_check(&self) -> Vec<usize> {
        if self.ts.is_empty() {
            vec![2, self.steps / 2, self.steps]
        } else {
            self.ts.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem2Record {
    pub t: usize,
    pub eta_shift: f64,
    pub sigma_scale: f64,
    pub step_kl: f64,
    pub step_kl_on: f64,
    pub step_kl_off: f64,
    pub lower_bound: f64,
    pub difference: f64,
    pub error: Option<String>,
}

impl CsvRecord for Theorem2Record {
    const HEADER: &'static [&'static str] = &[
        "t",
        "eta_shift",
        "sigma_scale",
        "step_kl",
        "step_kl_on",
        "step_kl_off",
        "lower_bound",
        "difference",
        "error",
    ];

    fn fields(&self) -> Vec<String> {
        let failed = self.error.is_some();
        vec![
            self.t.to_string(),
            fmt_f64(self.eta_shift),
            fmt_f64(self.sigma_scale),
            fmt_opt(self.step_kl, failed),
            fmt_opt(self.step_kl_on, failed),
            fmt_opt(self.step_kl_off, failed),
            fmt_opt(self.lower_bound, failed),
            fmt_opt(self.difference, failed),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Per-step KL against its dimension-linear lower bound over a grid of
/// perturbations of the star design.
pub fn run_theorem2_grid(cfg: &Theorem2Config) -> Result<Vec<Theorem2Record>> {
    let s = cfg.schedule.build(cfg.steps)?;
    let star = DesignKind::Star.build(&s);
    let mut grid = Vec::new();
    for t in cfg.steps_to_check() {
        for &eta_shift in &cfg.eta_shifts {
            for &sigma_scale in &cfg.sigma_scales {
                grid.push((t, eta_shift, sigma_scale));
            }
        }
    }
    Ok(grid
        .into_par_iter()
        .map(|(t, eta_shift, sigma_scale)| {
            let outcome = (|| -> Result<(f64, f64, f64)> {
                let design = star.perturbed(eta_shift, sigma_scale)?;
                let split = conditional_step_kl_split(&s, &design, t, cfg.k, cfg.d)?;
                let lb = step_kl_lower_bound(&s, &design, t, cfg.d)?;
                Ok((split.on, split.off, lb))
            })();
            match outcome {
                Ok((on, off, lb)) => Theorem2Record {
                    t,
                    eta_shift,
                    sigma_scale,
                    step_kl: on + off,
                    step_kl_on: on,
                    step_kl_off: off,
                    lower_bound: lb,
                    difference: on + off - lb,
                    error: None,
                },
                Err(e) => Theorem2Record {
                    t,
                    eta_shift,
                    sigma_scale,
                    step_kl: f64::NAN,
                    step_kl_on: f64::NAN,
                    step_kl_off: f64::NAN,
                    lower_bound: f64::NAN,
                    difference: f64::NAN,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// rate

#[derive(Debug, Clone, PartialEq)]
pub struct RateConfig {
    pub schedule: ScheduleSpec,
    pub steps: Vec<usize>,
    pub d: usize,
    pub k: usize,
    pub design: DesignKind,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::paper(),
            steps: vec![100, 200, 400, 800, 1600],
            d: 64,
            k: 8,
            design: DesignKind::Star,
        }
    }
}

impl RateConfig {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            schedule: ScheduleSpec::take(&mut cfg, d.schedule)?,
            steps: cfg.take_list("T", d.steps)?,
            d: cfg.take("d", d.d)?,
            k: cfg.take("k", d.k)?,
            design: cfg.take("design", d.design)?,
        };
        cfg.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRecord {
    pub steps: usize,
    pub kl_exact: f64,
    pub step_kl_sum: f64,
    pub init_kl: f64,
    pub error: Option<String>,
}

impl CsvRecord for RateRecord {
    const HEADER: &'static [&'static str] = &["T", "kl_exact", "step_kl_sum", "init_kl", "error"];

    fn fields(&self) -> Vec<String> {
        let failed = self.error.is_some();
        vec![
            self.steps.to_string(),
            fmt_opt(self.kl_exact, failed),
            fmt_opt(self.step_kl_sum, failed),
            fmt_opt(self.init_kl, failed),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

pub fn run_rate_sweep(cfg: &RateConfig) -> Vec<RateRecord> {
    cfg.steps
        .par_iter()
        .map(|&steps| match cfg.schedule.build(steps).and_then(|s| exact_point(&s, cfg.design, cfg.k, cfg.d)) {
            Ok(p) => RateRecord {
                steps,
                kl_exact: p.kl_exact,
                step_kl_sum: p.step_kl_sum,
                init_kl: p.init_kl,
                error: None,
            },
            Err(e) => RateRecord {
                steps,
                kl_exact: f64::NAN,
                step_kl_sum: f64::NAN,
                init_kl: f64::NAN,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

/// Least-squares slope of `ln kl_exact` against `ln T` over successful rows
/// with positive KL. `None` with fewer than two such rows.
pub fn rate_slope(records: &[RateRecord]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = records
        .iter()
        .filter(|r| r.error.is_none() && r.kl_exact > 0.0)
        .map(|r| ((r.steps as f64).ln(), r.kl_exact.ln()))
        .unzip();
    (x.len() >= 2).then(|| least_squares_slope(&x, &y))
}

// ---------------------------------------------------------------------------
// perturb

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub schedule: ScheduleSpec,
    pub steps: usize,
    pub d: usize,
    pub k: usize,
    pub design: DesignKind,
    pub eps: Vec<f64>,
    pub model: PerturbationModel,
    /// Reverse-process ensemble size.
    pub n: usize,
    pub tv_samples: usize,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleSpec::linear(),
            steps: 200,
            d: 32,
            k: 8,
            design: DesignKind::Star,
            eps: vec![0.0, 0.01, 0.02, 0.05, 0.1],
            model: PerturbationModel::ConstantBias,
            n: 100_000,
            tv_samples: 200_000,
            seed: 0,
            antithetic: true,
        }
    }
}

impl PerturbConfig {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let out = Self {
            schedule: ScheduleSpec::take(&mut cfg, d.schedule)?,
            steps: cfg.take("T", d.steps)?,
            d: cfg.take("d", d.d)?,
            k: cfg.take("k", d.k)?,
            design: cfg.take("design", d.design)?,
            eps: cfg.take_list("eps", d.eps)?,
            model: cfg.take("model", d.model)?,
            n: cfg.take("n", d.n)?,
            tv_samples: cfg.take("tv_samples", d.tv_samples)?,
            seed: cfg.take("seed", d.seed)?,
            antithetic: cfg.take("antithetic", d.antithetic)?,
        };
        cfg.finish()?;
        Ok(out)
    }

    fn reverse_seed(&self) -> u64 {
        seed_for(self.seed, "perturb/reverse")
    }

    fn oracle_seed(&self) -> u64 {
        seed_for(self.seed, "perturb/oracle")
    }

    fn tv_seed(&self) -> u64 {
        seed_for(self.seed, "perturb/tv")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbRecord {
    pub eps: f64,
    pub model: String,
    pub tv_estimate: f64,
    pub tv_stderr: f64,
    pub fit_on_var: f64,
    pub fit_off_var: f64,
    pub fit_mean_norm: f64,
    /// Largest relative deviation of a per-coordinate variance from its
    /// pooled block value.
    pub fit_residual: f64,
    pub error: Option<String>,
}

impl CsvRecord for PerturbRecord {
    const HEADER: &'static [&'static str] = &[
        "eps",
        "model",
        "tv_estimate",
        "tv_stderr",
        "fit_on_var",
        "fit_off_var",
        "fit_mean_norm",
        "fit_residual",
        "error",
    ];

    fn fields(&self) -> Vec<String> {
        let failed = self.error.is_some();
        vec![
            fmt_f64(self.eps),
            self.model.clone(),
            fmt_opt(self.tv_estimate, failed),
            fmt_opt(self.tv_stderr, failed),
            fmt_opt(self.fit_on_var, failed),
            fmt_opt(self.fit_off_var, failed),
            fmt_opt(self.fit_mean_norm, failed),
            fmt_opt(self.fit_residual, failed),
            self.error.clone().unwrap_or_default(),
        ]
    }
}

/// Diagonal Gaussian fitted to an ensemble: per-coordinate means, pooled
/// variance per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFit {
    pub law: DiagGaussian,
    pub on_var: f64,
    pub off_var: f64,
    pub residual: f64,
}

pub fn fit_block_gaussian(ensemble: ArrayView2<'_, f64>, k: usize) -> Result<BlockFit> {
    let (n, d) = ensemble.dim();
    if n < 2 || k > d {
        return Err(Error::InvalidParameter(format!("cannot fit a {k}-block law to a {n}x{d} ensemble")));
    }
    let mean = ensemble.mean_axis(Axis(0)).expect("n > 0");
    let var = ensemble.var_axis(Axis(0), 0.0);
    let pooled = |range: std::ops::Range<usize>| -> f64 {
        if range.is_empty() {
            1.0
        } else {
            let len = range.len() as f64;
            range.map(|i| var[i]).sum::<f64>() / len
        }
    };
    let on_var = pooled(0..k);
    let off_var = pooled(k..d);
    let mut residual: f64 = 0.0;
    for (i, v) in var.iter().enumerate() {
        let block = if i < k { on_var } else { off_var };
        residual = residual.max((v / block - 1.0).abs());
    }
    let mut block_var = vec![on_var; k];
    block_var.resize(d, off_var);
    let law = DiagGaussian::new(mean.to_vec(), block_var)?;
    Ok(BlockFit { law, on_var, off_var, residual })
}

fn perturb_setup(cfg: &PerturbConfig) -> Result<(Schedule, Target)> {
    let s = cfg.schedule.build(cfg.steps)?;
    let target = Target::degenerate_gaussian(cfg.k, cfg.d)?;
    Ok((s, target))
}

/// For each `eps`: run the reverse process with a perturbed oracle, fit a
/// block Gaussian to the `Y_1` ensemble and estimate its TV distance to
/// `q_1`. All `eps` values share the same reverse-process noise, oracle
/// directions and TV samples (common random numbers), so differences
/// between rows reflect `eps` alone.
pub fn run_perturbation_sweep(cfg: &PerturbConfig) -> Result<Vec<PerturbRecord>> {
    let (s, target) = perturb_setup(cfg)?;
    let design = cfg.design.build(&s);
    let q1 = DiagGaussian::from(&forward_marginal_law(&s, 1, cfg.k, cfg.d)?);
    let mut out = Vec::with_capacity(cfg.eps.len());
    for &eps in &cfg.eps {
        let outcome = (|| -> Result<(BlockFit, f64, f64)> {
            let oracle = ScoreOracle::perturbed(&target, &s, eps, cfg.model, cfg.oracle_seed())?;
            let run_cfg =
                ReverseRunConfig::new(&s, &design, &oracle, cfg.n, cfg.reverse_seed()).antithetic(cfg.antithetic);
            let run = run_reverse(&run_cfg)?;
            let fit = fit_block_gaussian(run.ensemble.view(), cfg.k)?;
            let tv = mc_tv_diag(&q1, &fit.law, cfg.tv_samples, cfg.tv_seed())?;
            Ok((fit, tv.value, tv.stderr))
        })();
        out.push(match outcome {
            Ok((fit, tv, se)) => PerturbRecord {
                eps,
                model: cfg.model.name().into(),
                tv_estimate: tv,
                tv_stderr: se,
                fit_on_var: fit.on_var,
                fit_off_var: fit.off_var,
                fit_mean_norm: fit.law.mean.iter().map(|m| m * m).sum::<f64>().sqrt(),
                fit_residual: fit.residual,
                error: None,
            },
            Err(e) => PerturbRecord {
                eps,
                model: cfg.model.name().into(),
                tv_estimate: f64::NAN,
                tv_stderr: f64::NAN,
                fit_on_var: f64::NAN,
                fit_off_var: f64::NAN,
                fit_mean_norm: f64::NAN,
                fit_residual: f64::NAN,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(out)
}

/// Least-squares slope of TV against `eps` over successful rows.
pub fn perturbation_slope(records: &[PerturbRecord]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        records.iter().filter(|r| r.error.is_none()).map(|r| (r.eps, r.tv_estimate)).unzip();
    (x.len() >= 2).then(|| least_squares_slope(&x, &y))
}

/// The first `count` trajectories of the reverse run used for `eps`.
/// Trajectory `j` is identical to trajectory `j` of the full sweep run.
pub fn perturbation_trajectories(cfg: &PerturbConfig, eps: f64, count: usize) -> Result<Trajectory> {
    let (s, target) = perturb_setup(cfg)?;
    let design = cfg.design.build(&s);
    let oracle = ScoreOracle::perturbed(&target, &s, eps, cfg.model, cfg.oracle_seed())?;
    let run_cfg = ReverseRunConfig::new(&s, &design, &oracle, count.min(cfg.n).max(1), cfg.reverse_seed())
        .antithetic(cfg.antithetic)
        .with_trajectory();
    Ok(run_reverse(&run_cfg)?.trajectory.expect("recorded"))
}

// ---------------------------------------------------------------------------
// covering

#[derive(Debug, Clone, PartialEq)]
pub enum CloudSource {
    Csv(PathBuf),
    /// `side^r` grid on the unit cube, embedded in `R^d`.
    Grid { r: usize, side: usize, d: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringConfig {
    pub source: CloudSource,
    pub steps: usize,
    pub c_eps: f64,
    pub c_cover: f64,
    /// Explicit radius; overrides `T^{-c_eps}` for the net (the dimension
    /// estimate still uses `T` and `C_cover`).
    pub eps: Option<f64>,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self { source: CloudSource::Grid { r: 2, side: 50, d: 50 }, steps: 10, c_eps: 1.0, c_cover: 1.0, eps: None }
    }
}

impl CoveringConfig {
    pub fn from_kv(mut cfg: KvConfig) -> Result<Self> {
        let d = Self::default();
        let input: Option<PathBuf> = cfg.take_opt("input")?;
        let source = match input {
            Some(path) => {
                for key in ["grid_dim", "grid_side", "ambient_dim"] {
                    if cfg.contains(key) {
                        return Err(Error::Config(format!("{key} conflicts with input")));
                    }
                }
                CloudSource::Csv(path)
            }
            None => CloudSource::Grid {
                r: cfg.take("grid_dim", 2)?,
                side: cfg.take("grid_side", 50)?,
                d: cfg.take("ambient_dim", 50)?,
            },
        };
        let out = Self {
            source,
            steps: cfg.take("T", d.steps)?,
            c_eps: cfg.take("c_eps", d.c_eps)?,
            c_cover: cfg.take("c_cover", d.c_cover)?,
            eps: cfg.take_opt("eps")?,
        };
        cfg.finish()?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveringResult {
    pub net: EpsilonNet,
    pub estimate: f64,
    pub cloud_size: usize,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetRow {
    pub net_rank: usize,
    pub point_index: usize,
    pub eps: f64,
    pub net_size: usize,
    pub estimate: f64,
    pub cover_radius: f64,
}

impl CsvRecord for NetRow {
    const HEADER: &'static [&'static str] =
        &["net_rank", "point_index", "eps", "net_size", "estimate", "cover_radius"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.net_rank.to_string(),
            self.point_index.to_string(),
            fmt_f64(self.eps),
            self.net_size.to_string(),
            fmt_f64(self.estimate),
            fmt_f64(self.cover_radius),
        ]
    }
}

impl CoveringResult {
    pub fn rows(&self) -> Vec<NetRow> {
        self.net
            .indices
            .iter()
            .enumerate()
            .map(|(rank, &idx)| NetRow {
                net_rank: rank,
                point_index: idx,
                eps: self.net.eps,
                net_size: self.net.len(),
                estimate: self.estimate,
                cover_radius: self.net.cover_radius,
            })
            .collect()
    }
}

pub fn run_covering(cfg: &CoveringConfig) -> Result<CoveringResult> {
    let cloud = match &cfg.source {
        CloudSource::Csv(path) => PointCloud::from_csv(path)?,
        CloudSource::Grid { r, side, d } => grid_cloud(*r, *side, *d)?,
    };
    let (estimate, net) = match cfg.eps {
        None => intrinsic_dim_with_net(&cloud, cfg.steps, cfg.c_eps, cfg.c_cover)?,
        Some(eps) => {
            if cfg.steps < 2 || !(cfg.c_cover > 0.0) {
                return Err(Error::InvalidParameter("T >= 2 and C_cover > 0 required".into()));
            }
            let net = greedy_epsilon_net(&cloud, eps)?;
            ((net.len() as f64).ln() / (cfg.c_cover * (cfg.steps as f64).ln()), net)
        }
    };
    Ok(CoveringResult { net, estimate, cloud_size: cloud.len(), radius: cloud.radius() })
}
