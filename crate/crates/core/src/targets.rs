//! Analytic target distributions with exact forward marginals, posterior
//! means and score functions.
//!
//! Two families are supported:
//!
//! * [`Target::DegenerateGaussian`]: `N(0, I_k)` embedded in `R^d`, i.e. unit
//!   variance on the first `k` coordinates and exactly zero elsewhere. The
//!   noised marginal at step `t` is `N(0, alpha_bar_t I_k + (1 - alpha_bar_t) I_d)`,
//!   so the on-support variance is exactly 1 for every `t`.
//! * [`Target::PointMixture`]: a finite weighted set of atoms. The noised
//!   marginal is a Gaussian mixture and every quantity is evaluated with
//!   max-subtracted log-sum-exp.
//!
//! The data law itself has no density on `R^d`, so density and score queries
//! are defined for `t >= 1` only.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_step, invalid, Error, Result};
use crate::schedules::Schedule;
use crate::seed::{derive_seed, rng_for, Rng};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Finite mixture of point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMixture {
    atoms: Array2<f64>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    radius: f64,
}

impl PointMixture {
    /// `atoms` is `m x d`, one atom per row. Weights must be positive and sum
    /// to one within `1e-12`.
    pub fn new(atoms: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        let (m, d) = atoms.dim();
        if m == 0 || d == 0 {
            return Err(invalid("point mixture needs at least one atom of positive dimension"));
        }
        if weights.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: weights.len() });
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(invalid("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("mixture weights sum to {total}, expected 1")));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(invalid("atom coordinates must be finite"));
        }
        let radius = atoms
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { atoms, weights, log_weights, radius })
    }

    /// Equal-weight mixture.
    pub fn uniform(atoms: Array2<f64>) -> Result<Self> {
        let m = atoms.nrows();
        Self::new(atoms, vec![1.0 / m as f64; m])
    }

    /// Reads atoms from a headerless CSV file: each row is
    /// `weight, x_1, ..., x_d`. Weights are normalized to sum to one.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)?;
        let mut weights = Vec::new();
        let mut coords = Vec::new();
        let mut dim = None;
        for (line, record) in reader.records().enumerate() {
            let record = record?;
            let values: Vec<f64> = record
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid(format!("{}: row {}: {e}", path.display(), line + 1)))?;
            if values.len() < 2 {
                return Err(invalid(format!("{}: row {} has no coordinates", path.display(), line + 1)));
            }
            let d = values.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::DimensionMismatch { expected, got: d });
                }
                _ => {}
            }
            weights.push(values[0]);
            coords.extend_from_slice(&values[1..]);
        }
        let d = dim.ok_or_else(|| invalid(format!("{}: no atoms", path.display())))?;
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("mixture weights must be positive"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        let atoms = Array2::from_shape_vec((coords.len() / d, d), coords)
            .map_err(|e| invalid(e.to_string()))?;
        Self::new(atoms, weights)
    }

    pub fn atoms(&self) -> ArrayView2<'_, f64> {
        self.atoms.view()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `R = max_i ||x_i||`.
    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Unnormalized log posterior weights of each atom given `X_t = x`.
    fn log_responsibilities(&self, scale: f64, var: f64, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, lw) in self.atoms.rows().into_iter().zip(&self.log_weights) {
            let dist2: f64 = x.iter().zip(row).map(|(xi, ai)| (xi - scale * ai).powi(2)).sum();
            out.push(lw - dist2 / (2.0 * var));
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Target distribution `p_data`.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    DegenerateGaussian { k: usize, d: usize },
    PointMixture(PointMixture),
}

impl Target {
    pub fn degenerate_gaussian(k: usize, d: usize) -> Result<Self> {
        if k == 0 || k > d {
            return Err(invalid(format!("degenerate Gaussian needs 1 <= k <= d, got k={k}, d={d}")));
        }
        Ok(Target::DegenerateGaussian { k, d })
    }

    pub fn point_mixture(atoms: Array2<f64>, weights: Vec<f64>) -> Result<Self> {
        PointMixture::new(atoms, weights).map(Target::PointMixture)
    }

    /// Ambient dimension `d`.
    pub fn dim(&self) -> usize {
        match self {
            Target::DegenerateGaussian { d, .. } => *d,
            Target::PointMixture(pm) => pm.atoms.ncols(),
        }
    }

    /// Intrinsic dimension `k` for the Gaussian family, atom count for a
    /// point mixture.
    pub fn intrinsic_dim(&self) -> usize {
        match self {
            Target::DegenerateGaussian { k, .. } => *k,
            Target::PointMixture(pm) => pm.len(),
        }
    }

    /// Support radius. Infinite for the (untruncated) Gaussian family.
    pub fn radius(&self) -> f64 {
        match self {
            Target::DegenerateGaussian { .. } => f64::INFINITY,
            Target::PointMixture(pm) => pm.radius,
        }
    }

    /// `n` i.i.d. draws from `p_data`, one per row. Row `i` uses its own
    /// generator `derive_seed(seed, i)`.
    pub fn sample_x0(&self, n: usize, seed: u64) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mut rng = rng_for(seed, i as u64);
            self.draw_x0(&mut rng, row.as_slice_mut().expect("standard layout"));
        }
        out
    }

    fn draw_x0(&self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            Target::DegenerateGaussian { k, .. } => {
                for (i, v) in out.iter_mut().enumerate() {
                    *v = if i < *k { rng.sample(StandardNormal) } else { 0.0 };
                }
            }
            Target::PointMixture(pm) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = pm.len() - 1;
                for (i, w) in pm.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                for (o, a) in out.iter_mut().zip(pm.atoms.row(pick)) {
                    *o = *a;
                }
            }
        }
    }

    /// `n` draws of `X_t = sqrt(alpha_bar_t) X_0 + sqrt(1 - alpha_bar_t) W`.
    pub fn forward_marginal_sample(
        &self,
        schedule: &Schedule,
        t: usize,
        n: usize,
        seed: u64,
    ) -> Result<Array2<f64>> {
        check_step(t, 1, schedule.steps())?;
        let scale = schedule.alpha_bar(t).sqrt();
        let noise = schedule.one_minus_alpha_bar(t).sqrt();
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let mut rng = rng_for(seed, i as u64);
            let row = row.as_slice_mut().expect("standard layout");
            self.draw_x0(&mut rng, row);
            for v in row.iter_mut() {
                let w: f64 = rng.sample(StandardNormal);
                *v = scale * *v + noise * w;
            }
        }
        Ok(out)
    }

    /// `log q_t(x)`.
    pub fn log_density(&self, schedule: &Schedule, t: usize, x: &[f64]) -> Result<f64> {
        self.check_query(schedule, t, x)?;
        let var = schedule.one_minus_alpha_bar(t);
        match self {
            Target::DegenerateGaussian { k, .. } => {
                let (on, off) = x.split_at(*k);
                let on_sq: f64 = on.iter().map(|v| v * v).sum();
                let off_sq: f64 = off.iter().map(|v| v * v).sum();
                let d = x.len() as f64;
                Ok(-0.5 * (d * LN_2PI + on_sq + off.len() as f64 * var.ln() + off_sq / var))
            }
            Target::PointMixture(pm) => {
                let mut logits = Vec::with_capacity(pm.len());
                pm.log_responsibilities(schedule.alpha_bar(t).sqrt(), var, x, &mut logits);
                let d = x.len() as f64;
                Ok(log_sum_exp(&logits) - 0.5 * d * (LN_2PI + var.ln()))
            }
        }
    }

    /// `E[X_0 | X_t = x]`.
    pub fn posterior_mean(&self, schedule: &Schedule, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_query(schedule, t, x)?;
        let mut out = vec![0.0; x.len()];
        let mut scratch = Vec::new();
        self.posterior_mean_into(schedule, t, x, &mut out, &mut scratch);
        Ok(out)
    }

    fn posterior_mean_into(
        &self,
        schedule: &Schedule,
        t: usize,
        x: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let scale = schedule.alpha_bar(t).sqrt();
        match self {
            Target::DegenerateGaussian { k, .. } => {
                for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
                    *o = if i < *k { scale * v } else { 0.0 };
                }
            }
            Target::PointMixture(pm) => {
                pm.log_responsibilities(scale, schedule.one_minus_alpha_bar(t), x, scratch);
                let max = scratch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for l in scratch.iter_mut() {
                    *l = (*l - max).exp();
                    total += *l;
                }
                out.iter_mut().for_each(|o| *o = 0.0);
                for (w, row) in scratch.iter().zip(pm.atoms.rows()) {
                    let w = w / total;
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += w * a;
                    }
                }
            }
        }
    }

    /// `grad log q_t(x)`.
    pub fn exact_score(&self, schedule: &Schedule, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.check_query(schedule, t, x)?;
        let mut out = vec![0.0; x.len()];
        let mut scratch = Vec::new();
        self.score_into(schedule, t, x, &mut out, &mut scratch);
        Ok(out)
    }

    fn score_into(
        &self,
        schedule: &Schedule,
        t: usize,
        x: &[f64],
        out: &mut [f64],
        scratch: &mut Vec<f64>,
    ) {
        let var = schedule.one_minus_alpha_bar(t);
        match self {
            Target::DegenerateGaussian { k, .. } => {
                // On-support marginal variance is alpha_bar + (1 - alpha_bar) = 1.
                for (i, (o, v)) in out.iter_mut().zip(x).enumerate() {
                    *o = if i < *k { -v } else { -v / var };
                }
            }
            Target::PointMixture(_) => {
                self.posterior_mean_into(schedule, t, x, out, scratch);
                let scale = schedule.alpha_bar(t).sqrt();
                for (o, v) in out.iter_mut().zip(x) {
                    *o = -(v - scale * *o) / var;
                }
            }
        }
    }

    fn check_query(&self, schedule: &Schedule, t: usize, x: &[f64]) -> Result<()> {
        check_step(t, 1, schedule.steps())?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.len() });
        }
        Ok(())
    }
}

/// A score estimate `(t, x) -> s_t(x)` usable by the reverse sampler.
pub trait ScoreFn: Sync {
    fn dim(&self) -> usize;

    /// Writes `s_t(x)` into `out`. `scratch` is reusable per-thread storage.
    fn score_into(&self, t: usize, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>);
}

/// How the synthetic score error `e_t(x)` is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationModel {
    /// `e_t(x) = eps * u_t`.
    ConstantBias,
    /// `e_t(x) = eps * u_t * sign(v_t . x)`.
    RandomField,
}

impl PerturbationModel {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationModel::ConstantBias => "constant-bias",
            PerturbationModel::RandomField => "random-field",
        }
    }
}

impl std::str::FromStr for PerturbationModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "constant-bias" => Ok(PerturbationModel::ConstantBias),
            "random-field" => Ok(PerturbationModel::RandomField),
            other => Err(invalid(format!(
                "unknown perturbation model {other:?} (expected constant-bias|random-field)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Perturbation {
    model: PerturbationModel,
    eps: f64,
    // T x d, row t-1 holds u_t
    directions: Array2<f64>,
    // T x d, row t-1 holds v_t (random-field only)
    probes: Array2<f64>,
}

/// Whether an oracle returns the exact score or a perturbed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleLabel {
    Exact,
    Perturbed,
}

/// Score oracle built on a target's exact score, optionally with a synthetic
/// error of controlled size: `E_{X ~ q_t} ||s_t(X) - s*_t(X)||^2 = eps^2` for
/// every `t`, so the averaged score error equals `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreOracle {
    target: Target,
    schedule: Schedule,
    perturbation: Option<Perturbation>,
}

impl ScoreOracle {
    pub fn exact(target: &Target, schedule: &Schedule) -> Self {
        Self { target: target.clone(), schedule: schedule.clone(), perturbation: None }
    }

    /// Exact score plus `eps`-sized error. Unit directions are drawn per step
    /// from `derive_seed(seed, t)`.
    pub fn perturbed(
        target: &Target,
        schedule: &Schedule,
        eps: f64,
        model: PerturbationModel,
        seed: u64,
    ) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid(format!("eps must be nonnegative, got {eps}")));
        }
        let steps = schedule.steps();
        let d = target.dim();
        let mut directions = Array2::zeros((steps, d));
        let mut probes = Array2::zeros((steps, d));
        for t in 1..=steps {
            let mut rng = rng_for(seed, t as u64);
            fill_unit(&mut rng, directions.row_mut(t - 1).as_slice_mut().expect("layout"));
            if model == PerturbationModel::RandomField {
                let mut rng = rng_for(derive_seed(seed, u64::MAX), t as u64);
                fill_unit(&mut rng, probes.row_mut(t - 1).as_slice_mut().expect("layout"));
            }
        }
        Ok(Self {
            target: target.clone(),
            schedule: schedule.clone(),
            perturbation: Some(Perturbation { model, eps, directions, probes }),
        })
    }

    pub fn label(&self) -> OracleLabel {
        if self.perturbation.is_some() {
            OracleLabel::Perturbed
        } else {
            OracleLabel::Exact
        }
    }

    pub fn eps(&self) -> f64 {
        self.perturbation.as_ref().map_or(0.0, |p| p.eps)
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    /// Unit direction `u_t` of the perturbation, if any.
    pub fn bias_direction(&self, t: usize) -> Option<Vec<f64>> {
        self.perturbation.as_ref().map(|p| p.directions.row(t - 1).to_vec())
    }

    /// Allocating convenience wrapper around [`ScoreFn::score_into`].
    pub fn score(&self, t: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.target.check_query(&self.schedule, t, x)?;
        let mut out = vec![0.0; x.len()];
        let mut scratch = Vec::new();
        ScoreFn::score_into(self, t, x, &mut out, &mut scratch);
        Ok(out)
    }
}

impl ScoreFn for ScoreOracle {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn score_into(&self, t: usize, x: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        self.target.score_into(&self.schedule, t, x, out, scratch);
        let Some(p) = &self.perturbation else { return };
        if p.eps == 0.0 {
            return;
        }
        let u = p.directions.row(t - 1);
        let sign = match p.model {
            PerturbationModel::ConstantBias => 1.0,
            PerturbationModel::RandomField => {
                let proj: f64 = p.probes.row(t - 1).iter().zip(x).map(|(v, xi)| v * xi).sum();
                if proj >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        for (o, ui) in out.iter_mut().zip(u) {
            *o += sign * p.eps * ui;
        }
    }
}

fn fill_unit(rng: &mut Rng, out: &mut [f64]) {
    loop {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-12 {
            out.iter_mut().for_each(|v| *v /= norm);
            return;
        }
    }
}
