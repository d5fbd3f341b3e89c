//! Monte Carlo DDPM reverse process.
//!
//! `Y_T ~ N(0, I_d)`, then for `t = T, ..., stop_t + 1`
//!
//! ```text
//! Y_{t-1} = (Y_t + eta_t s_t(Y_t) + sigma_t Z_t) / sqrt(alpha_t)
//! ```
//!
//! Trajectory `j` draws all of its Gaussians from `derive_seed(seed, j)`, so an
//! ensemble is bitwise identical however it is split across workers, and the
//! first `m` trajectories of a large run equal an `n = m` run with the same
//! seed. With `antithetic` set, trajectories `2p` and `2p + 1` share the
//! stream of pair `p` with opposite signs.

use std::io::Write;

use ndarray::{Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::schedules::{CoefficientDesign, Schedule};
use crate::seed::{rng_for, Rng};
use crate::targets::ScoreFn;

/// Any coordinate beyond this magnitude aborts the run as divergent.
pub const OVERFLOW_GUARD: f64 = 1e15;

/// Trajectories handed to one worker at a time.
const CHUNK: usize = 256;

#[derive(Debug, Clone)]
pub struct ReverseRunConfig<'a, S: ScoreFn> {
    pub schedule: &'a Schedule,
    pub design: &'a CoefficientDesign,
    pub oracle: &'a S,
    /// Ensemble size.
    pub n: usize,
    /// The run stops once `Y_{stop_t}` is produced (default 1).
    pub stop_t: usize,
    pub seed: u64,
    /// Keep every intermediate state `Y_T, ..., Y_{stop_t}`.
    pub record_trajectory: bool,
    /// Pair trajectories with sign-flipped noise.
    pub antithetic: bool,
}

impl<'a, S: ScoreFn> ReverseRunConfig<'a, S> {
    pub fn new(schedule: &'a Schedule, design: &'a CoefficientDesign, oracle: &'a S, n: usize, seed: u64) -> Self {
        Self { schedule, design, oracle, n, stop_t: 1, seed, record_trajectory: false, antithetic: false }
    }

    pub fn stop_at(mut self, stop_t: usize) -> Self {
        self.stop_t = stop_t;
        self
    }

    pub fn with_trajectory(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    fn validate(&self) -> Result<()> {
        let steps = self.schedule.steps();
        if self.design.steps() != steps {
            return Err(Error::DimensionMismatch { expected: steps, got: self.design.steps() });
        }
        if self.n == 0 {
            return Err(invalid("ensemble size must be at least 1"));
        }
        if self.stop_t < 1 || self.stop_t > steps {
            return Err(Error::IndexOutOfRange { t: self.stop_t, min: 1, max: steps });
        }
        Ok(())
    }
}

/// Recorded states; `states[i]` is the `n x d` ensemble at step `T - i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub top: usize,
    pub states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn step(&self, t: usize) -> Option<&Array2<f64>> {
        self.top.checked_sub(t).and_then(|i| self.states.get(i))
    }

    /// CSV with columns `trajectory_id, t, coord_0, ..., coord_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.states.first().map_or(0, |s| s.ncols());
        let mut header = vec!["trajectory_id".to_string(), "t".to_string()];
        header.extend((0..d).map(|i| format!("coord_{i}")));
        w.write_record(&header)?;
        let n = self.states.first().map_or(0, |s| s.nrows());
        for j in 0..n {
            for (i, state) in self.states.iter().enumerate() {
                let mut rec = vec![j.to_string(), (self.top - i).to_string()];
                rec.extend(state.row(j).iter().map(|v| crate::experiments::fmt_f64(*v)));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::Io { path: "<trajectory>".into(), source: e })?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReverseRun {
    /// `n x d` samples of `Y_{stop_t}`.
    pub ensemble: Array2<f64>,
    pub trajectory: Option<Trajectory>,
    /// Total score evaluations, `n * (T - stop_t)`.
    pub score_evals: usize,
}

/// Runs the reverse sampler over the whole ensemble using the ambient rayon
/// pool.
pub fn run_reverse<S: ScoreFn>(cfg: &ReverseRunConfig<'_, S>) -> Result<ReverseRun> {
    cfg.validate()?;
    let n = cfg.n;
    let chunks: Vec<std::ops::Range<usize>> =
        (0..n).step_by(CHUNK).map(|lo| lo..(lo + CHUNK).min(n)).collect();
    let parts = chunks
        .into_par_iter()
        .map(|range| run_range(cfg, range))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, parts))
}

/// Runs only trajectories `range` of the configured ensemble. Concatenating
/// the ensembles of any partition of `0..n` reproduces [`run_reverse`].
pub fn run_reverse_range<S: ScoreFn>(
    cfg: &ReverseRunConfig<'_, S>,
    range: std::ops::Range<usize>,
) -> Result<ReverseRun> {
    cfg.validate()?;
    if range.end > cfg.n || range.start > range.end {
        return Err(invalid(format!("trajectory range {range:?} outside 0..{}", cfg.n)));
    }
    let part = run_range(cfg, range)?;
    Ok(assemble(cfg, vec![part]))
}

struct Part {
    len: usize,
    final_states: Vec<f64>,
    // states[i] = flattened ensemble slice at step T - i
    states: Vec<Vec<f64>>,
}

fn assemble<S: ScoreFn>(cfg: &ReverseRunConfig<'_, S>, parts: Vec<Part>) -> ReverseRun {
    let d = cfg.oracle.dim();
    let steps = cfg.schedule.steps();
    let rows: usize = parts.iter().map(|p| p.len).sum();
    let mut flat = Vec::with_capacity(rows * d);
    for p in &parts {
        flat.extend_from_slice(&p.final_states);
    }
    let ensemble = Array2::from_shape_vec((rows, d), flat).expect("shape");
    let trajectory = cfg.record_trajectory.then(|| {
        let levels = steps - cfg.stop_t + 1;
        let states = (0..levels)
            .map(|i| {
                let mut flat = Vec::with_capacity(rows * d);
                for p in &parts {
                    flat.extend_from_slice(&p.states[i]);
                }
                Array2::from_shape_vec((rows, d), flat).expect("shape")
            })
            .collect();
        Trajectory { top: steps, states }
    });
    ReverseRun { ensemble, trajectory, score_evals: rows * (steps - cfg.stop_t) }
}

fn run_range<S: ScoreFn>(cfg: &ReverseRunConfig<'_, S>, range: std::ops::Range<usize>) -> Result<Part> {
    let d = cfg.oracle.dim();
    let steps = cfg.schedule.steps();
    let levels = steps - cfg.stop_t + 1;
    let len = range.len();
    let mut final_states = Vec::with_capacity(len * d);
    let mut states: Vec<Vec<f64>> = if cfg.record_trajectory {
        (0..levels).map(|_| Vec::with_capacity(len * d)).collect()
    } else {
        Vec::new()
    };
    let mut y = vec![0.0; d];
    let mut score = vec![0.0; d];
    let mut scratch = Vec::new();
    for j in range {
        let (stream, sign) = if cfg.antithetic { (j / 2, if j % 2 == 0 { 1.0 } else { -1.0 }) } else { (j, 1.0) };
        let mut rng = rng_for(cfg.seed, stream as u64);
        trajectory(cfg, &mut rng, sign, &mut y, &mut score, &mut scratch, &mut states)?;
        final_states.extend_from_slice(&y);
    }
    Ok(Part { len: final_states.len() / d.max(1), final_states, states })
}

fn trajectory<S: ScoreFn>(
    cfg: &ReverseRunConfig<'_, S>,
    rng: &mut Rng,
    sign: f64,
    y: &mut [f64],
    score: &mut [f64],
    scratch: &mut Vec<f64>,
    states: &mut [Vec<f64>],
) -> Result<()> {
    let steps = cfg.schedule.steps();
    for v in y.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v = sign * z;
    }
    if let Some(s) = states.first_mut() {
        s.extend_from_slice(y);
    }
    for t in (cfg.stop_t + 1..=steps).rev() {
        let eta = cfg.design.eta(t);
        let sigma = cfg.design.sigma(t);
        let inv_sqrt_alpha = 1.0 / cfg.schedule.alpha(t).sqrt();
        cfg.oracle.score_into(t, y, score, scratch);
        for (v, s) in y.iter_mut().zip(score.iter()) {
            let z: f64 = StandardNormal.sample(rng);
            *v = (*v + eta * s + sigma * sign * z) * inv_sqrt_alpha;
            if !(v.abs() <= OVERFLOW_GUARD) {
                return Err(Error::NumericOverflow { t, value: v.abs() });
            }
        }
        if let Some(s) = states.get_mut(steps - t + 1) {
            s.extend_from_slice(y);
        }
    }
    Ok(())
}

/// Two-block second-moment summary of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMoments {
    /// Mean per-coordinate variance over the first `k` coordinates.
    pub on_var: f64,
    /// Mean per-coordinate variance over the last `d - k` coordinates.
    pub off_var: f64,
    /// Largest absolute covariance between an on-block and an off-block
    /// coordinate.
    pub cross_max: f64,
    /// Standard error of `on_var`, from the per-sample spread.
    pub on_var_stderr: f64,
    pub off_var_stderr: f64,
    /// Standard error of the covariance entry attaining `cross_max`.
    pub cross_stderr: f64,
}

/// Block variances (mean-centered, `1/n` normalization) and the largest
/// cross-block covariance. An empty block reports zeros.
pub fn empirical_block_moments(ensemble: ArrayView2<'_, f64>, k: usize) -> Result<BlockMoments> {
    let (n, d) = ensemble.dim();
    if k > d {
        return Err(invalid(format!("k = {k} exceeds dimension {d}")));
    }
    if n == 0 {
        return Err(invalid("empty ensemble"));
    }
    let nf = n as f64;
    let mean = ensemble.mean_axis(Axis(0)).expect("n > 0");
    let centered = &ensemble - &mean.insert_axis(Axis(0));
    let (on, off) = centered.view().split_at(Axis(1), k);

    let block = |b: ArrayView2<'_, f64>| -> (f64, f64) {
        if b.ncols() == 0 {
            return (0.0, 0.0);
        }
        let w = b.map_axis(Axis(1), |r| r.dot(&r) / r.len() as f64);
        let m = w.sum() / nf;
        let spread = if n > 1 { (w.mapv(|v| (v - m).powi(2)).sum() / (nf - 1.0)).sqrt() } else { 0.0 };
        (m, spread / nf.sqrt())
    };
    let (on_var, on_var_stderr) = block(on);
    let (off_var, off_var_stderr) = block(off);

    let mut cross_max = 0.0;
    let mut cross_stderr = 0.0;
    if on.ncols() > 0 && off.ncols() > 0 {
        let cov = on.t().dot(&off) / nf;
        for ((i, j), c) in cov.indexed_iter() {
            if c.abs() >= cross_max {
                cross_max = c.abs();
                let prod = &on.column(i) * &off.column(j);
                let m2 = prod.dot(&prod) / nf;
                cross_stderr = ((m2 - c * c).max(0.0) / nf).sqrt();
            }
        }
    }
    Ok(BlockMoments { on_var, off_var, cross_max, on_var_stderr, off_var_stderr, cross_stderr })
}
