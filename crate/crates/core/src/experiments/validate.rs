//! The validation gate: every module invariant evaluated at fixed seeds.
//!
//! Checks run one after another in a fixed order and each records the
//! quantity it measured, so two runs produce identical reports.

use std::fmt;

use ndarray::Array2;

use crate::analytic::{
    chain_kl_upper_bound, conditional_step_kl_split, forward_marginal_law, propagate_reverse_law, step_kernels,
    step_kl_lower_bound, terminal_kl, variance_ratio_kl, DiagGaussianLaw,
};
use crate::covering::{grid_cloud, greedy_epsilon_net, intrinsic_dim_estimate, max_distance_to_centers};
use crate::error::Result;
use crate::metrics::mc_tv_diag_gaussians;
use crate::oracle::{central_difference_gradient, relative_error, tv_1d_quadrature};
use crate::sampler::{empirical_block_moments, run_reverse, ReverseRunConfig};
use crate::schedules::{DesignKind, Schedule};
use crate::seed::{derive_seed, rng_for};
use crate::targets::{ScoreOracle, Target};

use super::{run_figure1_sweep, to_csv_string, Figure1Config};

use rand::Rng as _;
use rand_distr::StandardNormal;

const SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// What was measured, against what threshold.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check { name, passed, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {:<40} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

pub fn run_validate() -> ValidationReport {
    let mut r = ValidationReport::default();
    r.push("schedule.log_space_alpha_bar", schedule_log_space());
    r.push("schedule.step_size_lemma", schedule_step_size());
    r.push("schedule.alpha_bar_decreasing", schedule_decreasing());
    r.push("design.star_below_simple", design_star_below_simple());
    r.push("design.perturbed_identity", design_perturbed_identity());
    r.push("targets.score_finite_difference", targets_score_fd());
    r.push("targets.posterior_mean_identity", targets_posterior_mean());
    r.push("targets.single_atom_tweedie", targets_tweedie());
    r.push("targets.forward_second_moments", targets_forward_moments());
    r.push("sampler.determinism", sampler_determinism());
    r.push("sampler.step_count", sampler_step_count());
    r.push("sampler.analytic_moments", sampler_moments());
    r.push("analytic.star_off_support_exact", analytic_star_exact());
    r.push("analytic.theorem2_dominance", analytic_dominance());
    r.push("analytic.g_inequality", analytic_g_inequality());
    r.push("analytic.chain_consistency", analytic_chain());
    r.push("analytic.initialization_error", analytic_init());
    r.push("metrics.quadrature_agreement", metrics_quadrature());
    r.push("metrics.block_swap_symmetry", metrics_block_swap());
    r.push("metrics.stderr_scaling", metrics_stderr_scaling());
    r.push("covering.cover_validity", covering_validity());
    r.push("covering.monotone_in_eps", covering_monotone());
    r.push("covering.embedding_invariance", covering_embedding());
    r.push("experiments.determinism", experiments_determinism());
    r
}

fn schedules() -> Result<Vec<Schedule>> {
    Ok(vec![
        Schedule::paper(100, 2.0, 4.0)?,
        Schedule::paper(1000, 2.0, 4.0)?,
        Schedule::linear(100, 1e-4, 0.02)?,
        Schedule::linear(1000, 1e-4, 0.02)?,
    ])
}

fn schedule_log_space() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    for s in schedules()? {
        for (a, b) in s.alpha_bars().iter().zip(s.alpha_bars_log_space()) {
            worst = worst.max(((a - b) / a).abs());
        }
    }
    Ok((worst < 1e-12, format!("max rel diff {worst:.3e} < 1e-12")))
}

fn schedule_step_size() -> Result<(bool, String)> {
    let mut ok = true;
    let mut detail = Vec::new();
    for steps in [100, 1000, 4000] {
        let s = Schedule::paper(steps, 2.0, 4.0)?;
        let min_alpha = s.alphas().iter().copied().fold(f64::INFINITY, f64::min);
        let cap = 8.0 * 4.0 * (steps as f64).ln() / steps as f64;
        let worst = (2..=steps)
            .map(|t| (1.0 - s.alpha(t)) / (s.alpha(t) - s.alpha_bar(t)))
            .fold(0.0, f64::max);
        ok &= min_alpha >= 0.5 && worst <= cap;
        detail.push(format!("T={steps}: min alpha {min_alpha:.4}, ratio {worst:.4e} <= {cap:.4e}"));
    }
    Ok((ok, detail.join("; ")))
}

fn schedule_decreasing() -> Result<(bool, String)> {
    let mut ok = true;
    for s in schedules()? {
        ok &= s.alpha_bars().windows(2).all(|w| w[1] < w[0]);
        ok &= s.betas().iter().all(|b| *b > 0.0 && *b < 1.0);
        ok &= (1..=s.steps()).all(|t| s.alpha(t) == 1.0 - s.beta(t));
    }
    Ok((ok, "beta in (0,1), alpha = 1 - beta, alpha_bar strictly decreasing".into()))
}

fn design_star_below_simple() -> Result<(bool, String)> {
    let mut ok = true;
    for s in schedules()? {
        let star = DesignKind::Star.build(&s);
        ok &= star.sigma2(1) == 0.0;
        ok &= (2..=s.steps()).all(|t| star.sigma2(t) > 0.0 && star.sigma2(t) < s.beta(t));
    }
    Ok((ok, "sigma*_1^2 = 0 and 0 < sigma*_t^2 < 1 - alpha_t for t >= 2".into()))
}

fn design_perturbed_identity() -> Result<(bool, String)> {
    let s = Schedule::paper(500, 2.0, 4.0)?;
    let mut ok = true;
    for kind in [DesignKind::Star, DesignKind::Simple] {
        let d = kind.build(&s);
        let p = d.perturbed(0.0, 1.0)?;
        ok &= p.etas().iter().zip(d.etas()).all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= p.sigma2s().iter().zip(d.sigma2s()).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    Ok((ok, "bitwise equal for star and simple".into()))
}

fn random_mixture(atoms: usize, d: usize, seed: u64) -> Result<Target> {
    let mut rng = rng_for(seed, 0);
    let points = Array2::from_shape_fn((atoms, d), |_| rng.sample::<f64, _>(StandardNormal));
    let raw: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.5..1.5)).collect();
    let total: f64 = raw.iter().sum();
    Target::point_mixture(points, raw.iter().map(|w| w / total).collect())
}

fn targets_score_fd() -> Result<(bool, String)> {
    let s = Schedule::linear(100, 1e-4, 0.02)?;
    let mixture = random_mixture(5, 8, SEED)?;
    let gaussian = Target::degenerate_gaussian(3, 8)?;
    let mut worst: f64 = 0.0;
    for (ti, target) in [mixture, gaussian].iter().enumerate() {
        for t in [2, 50, 100] {
            let xs = target.forward_marginal_sample(&s, t, 100, derive_seed(SEED, (ti * 1000 + t) as u64))?;
            for x in xs.rows() {
                let x = x.to_vec();
                let exact = target.exact_score(&s, t, &x)?;
                let fd = central_difference_gradient(
                    |p| target.log_density(&s, t, p).expect("valid query"),
                    &x,
                    1e-5,
                );
                worst = worst.max(relative_error(&exact, &fd));
            }
        }
    }
    Ok((worst < 1e-5, format!("max rel err {worst:.3e} < 1e-5")))
}

fn targets_posterior_mean() -> Result<(bool, String)> {
    let s = Schedule::paper(200, 2.0, 4.0)?;
    let target = random_mixture(6, 5, SEED + 1)?;
    let mut worst: f64 = 0.0;
    for t in [1, 2, 100, 200] {
        let scale = s.alpha_bar(t).sqrt();
        let var = s.one_minus_alpha_bar(t);
        let xs = target.forward_marginal_sample(&s, t, 50, derive_seed(SEED, t as u64))?;
        for x in xs.rows() {
            let x = x.to_vec();
            let pm = target.posterior_mean(&s, t, &x)?;
            let via_pm: Vec<f64> = x.iter().zip(&pm).map(|(v, m)| -(v - scale * m) / var).collect();
            worst = worst.max(relative_error(&target.exact_score(&s, t, &x)?, &via_pm));
        }
    }
    Ok((worst < 1e-12, format!("max rel diff {worst:.3e} < 1e-12")))
}

fn targets_tweedie() -> Result<(bool, String)> {
    let s = Schedule::linear(100, 1e-4, 0.02)?;
    let atom = vec![0.3, -1.2, 2.0, 0.0];
    let target = Target::point_mixture(Array2::from_shape_vec((1, 4), atom.clone()).expect("shape"), vec![1.0])?;
    let mut ok = true;
    for t in [1, 37, 100] {
        let scale = s.alpha_bar(t).sqrt();
        let var = s.one_minus_alpha_bar(t);
        let x = [1.0, 0.5, -0.25, 3.0];
        let expected: Vec<f64> = x.iter().zip(&atom).map(|(v, a)| -(v - scale * a) / var).collect();
        ok &= target.exact_score(&s, t, &x)? == expected;
    }
    Ok((ok, "exact equality at t = 1, 37, 100".into()))
}

fn targets_forward_moments() -> Result<(bool, String)> {
    let s = Schedule::linear(100, 1e-4, 0.02)?;
    let target = Target::degenerate_gaussian(3, 6)?;
    let t = 40;
    let n = 100_000;
    let xs = target.forward_marginal_sample(&s, t, n, SEED)?;
    let var_off = s.one_minus_alpha_bar(t);
    let mut worst: f64 = 0.0;
    for (i, col) in xs.columns().into_iter().enumerate() {
        let expected = if i < 3 { 1.0 } else { var_off };
        let m2 = col.dot(&col) / n as f64;
        let m4 = col.iter().map(|v| v.powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - m2 * m2) / n as f64).sqrt();
        worst = worst.max((m2 - expected).abs() / se);
    }
    Ok((worst < 5.0, format!("max |z| {worst:.3} < 5")))
}

fn small_run(seed: u64, n: usize) -> Result<Array2<f64>> {
    let s = Schedule::linear(50, 1e-4, 0.02)?;
    let design = DesignKind::Star.build(&s);
    let oracle = ScoreOracle::exact(&Target::degenerate_gaussian(2, 5)?, &s);
    Ok(run_reverse(&ReverseRunConfig::new(&s, &design, &oracle, n, seed))?.ensemble)
}

fn sampler_determinism() -> Result<(bool, String)> {
    let a = small_run(SEED, 300)?;
    let b = small_run(SEED, 300)?;
    let same = a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    Ok((same, "bitwise identical ensembles".into()))
}

fn sampler_step_count() -> Result<(bool, String)> {
    let s = Schedule::linear(60, 1e-4, 0.02)?;
    let design = DesignKind::Simple.build(&s);
    let oracle = ScoreOracle::exact(&Target::degenerate_gaussian(2, 4)?, &s);
    let run = run_reverse(&ReverseRunConfig::new(&s, &design, &oracle, 17, SEED).stop_at(5))?;
    let expected = 17 * (60 - 5);
    Ok((run.score_evals == expected, format!("{} evaluations, expected {expected}", run.score_evals)))
}

fn sampler_moments() -> Result<(bool, String)> {
    let (k, d) = (4, 16);
    let s = Schedule::linear(100, 1e-4, 0.02)?;
    let design = DesignKind::Star.build(&s);
    let oracle = ScoreOracle::exact(&Target::degenerate_gaussian(k, d)?, &s);
    let run = run_reverse(&ReverseRunConfig::new(&s, &design, &oracle, 100_000, SEED))?;
    let m = empirical_block_moments(run.ensemble.view(), k)?;
    let law = propagate_reverse_law(&s, &design, k, d, 1)?;
    let z_on = (m.on_var - law.on_var).abs() / m.on_var_stderr;
    let z_off = (m.off_var - law.off_var).abs() / m.off_var_stderr;
    let z_cross = m.cross_max / m.cross_stderr;
    let ok = z_on < 5.0 && z_off < 5.0 && z_cross < 5.0;
    Ok((ok, format!("|z| on {z_on:.2}, off {z_off:.2}, cross {z_cross:.2} < 5")))
}

fn analytic_star_exact() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut worst_kl: f64 = 0.0;
    for s in schedules()? {
        let star = DesignKind::Star.build(&s);
        for t in 2..=s.steps() {
            let kern = step_kernels(&s, &star, t)?;
            let rel = |a: f64, b: f64| ((a - b) / b).abs();
            worst = worst.max(rel(kern.reverse_off.mean_factor, kern.forward_off.mean_factor));
            worst = worst.max(rel(kern.reverse_off.var, kern.forward_off.var));
            worst_kl = worst_kl.max(conditional_step_kl_split(&s, &star, t, 0, 1)?.off);
        }
    }
    let ok = worst < 1e-10 && worst_kl < 1e-12;
    Ok((ok, format!("max rel kernel mismatch {worst:.3e} < 1e-10, off KL per coord {worst_kl:.3e}")))
}

/// Theorem-2 dominance on the 21 x 21 grid, with equality at the star point.
/// A wrong star variance shows up either as a negative margin or as a
/// nonzero off-support KL at the star point.
fn analytic_dominance() -> Result<(bool, String)> {
    let (d, k) = (64, 8);
    let shifts = super::linspace(-0.05, 0.05, 21);
    let scales = super::geomspace(0.5, 2.0, 21);
    let mut min_margin = f64::INFINITY;
    let mut star_lb: f64 = 0.0;
    let mut star_off: f64 = 0.0;
    for s in [Schedule::linear(1000, 1e-4, 0.02)?, Schedule::paper(1000, 2.0, 4.0)?] {
        let star = DesignKind::Star.build(&s);
        let steps = s.steps();
        for t in [2, steps / 2, steps] {
            for &de in &shifts {
                for &sc in &scales {
                    let design = star.perturbed(de, sc)?;
                    let kl = conditional_step_kl_split(&s, &design, t, k, d)?;
                    let lb = step_kl_lower_bound(&s, &design, t, d)?;
                    min_margin = min_margin.min(kl.total() - lb);
                    if de == 0.0 && sc == 1.0 {
                        star_lb = star_lb.max(lb.abs());
                        star_off = star_off.max(kl.off.abs());
                    }
                }
            }
        }
    }
    let ok = min_margin >= -1e-12 && star_lb <= 1e-12 && star_off <= 1e-12;
    Ok((
        ok,
        format!("min margin {min_margin:.3e} >= -1e-12; at star point bound {star_lb:.3e}, off KL {star_off:.3e}"),
    ))
}

fn analytic_g_inequality() -> Result<(bool, String)> {
    let n = 10_000;
    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        let z = 10f64.powf(-6.0 + 12.0 * i as f64 / (n - 1) as f64);
        let lhs = 2.0 * variance_ratio_kl(z);
        min_gap = min_gap.min(lhs - 0.1 * (z - 1.0).powi(2).min(1.0));
    }
    Ok((min_gap >= 0.0, format!("min slack {min_gap:.3e} >= 0")))
}

fn analytic_chain() -> Result<(bool, String)> {
    let mut min_slack = f64::INFINITY;
    for steps in [100, 1000] {
        for s in [Schedule::linear(steps, 1e-4, 0.02)?, Schedule::paper(steps, 2.0, 4.0)?] {
            for d in [16, 256] {
                for k in [4, 8] {
                    for kind in [DesignKind::Star, DesignKind::Simple] {
                        let design = kind.build(&s);
                        let bound = chain_kl_upper_bound(&s, &design, k, d)?.total;
                        min_slack = min_slack.min(bound - terminal_kl(&s, &design, k, d)?);
                    }
                }
            }
        }
    }
    Ok((min_slack >= 0.0, format!("min bound - KL {min_slack:.3e} >= 0")))
}

fn analytic_init() -> Result<(bool, String)> {
    let s = Schedule::paper(1000, 2.0, 4.0)?;
    let q = forward_marginal_law(&s, 1000, 8, 64)?;
    let kl = crate::analytic::diag_gaussian_kl(&q, &DiagGaussianLaw::standard(8, 64)?)?;
    Ok((kl < 1e-6, format!("KL(q_T || N(0,I)) = {kl:.3e} < 1e-6")))
}

fn metrics_quadrature() -> Result<(bool, String)> {
    let mut rng = rng_for(SEED, 7);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let vp = 10f64.powf(rng.random_range(-1.0..1.0));
        let vq = 10f64.powf(rng.random_range(-1.0..1.0));
        let p = DiagGaussianLaw::new(1, 1, vp, 1.0)?;
        let q = DiagGaussianLaw::new(1, 1, vq, 1.0)?;
        let est = mc_tv_diag_gaussians(&p, &q, 100_000, derive_seed(SEED, i))?;
        let exact = tv_1d_quadrature(vp, vq);
        worst = worst.max((est.value - exact).abs() / est.stderr.max(1e-300));
    }
    Ok((worst < 4.0, format!("max |z| {worst:.3} < 4 over 20 pairs")))
}

fn metrics_block_swap() -> Result<(bool, String)> {
    let p = DiagGaussianLaw::new(3, 10, 1.2, 0.4)?;
    let q = DiagGaussianLaw::new(3, 10, 0.9, 0.5)?;
    let ps = DiagGaussianLaw::new(7, 10, 0.4, 1.2)?;
    let qs = DiagGaussianLaw::new(7, 10, 0.5, 0.9)?;
    let a = mc_tv_diag_gaussians(&p, &q, 100_000, SEED)?;
    let b = mc_tv_diag_gaussians(&ps, &qs, 100_000, derive_seed(SEED, 1))?;
    let z = (a.value - b.value).abs() / (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
    Ok((z < 4.0, format!("TV {:.5} vs {:.5}, |z| {z:.3} < 4", a.value, b.value)))
}

fn metrics_stderr_scaling() -> Result<(bool, String)> {
    let p = DiagGaussianLaw::new(2, 6, 1.0, 0.3)?;
    let q = DiagGaussianLaw::new(2, 6, 1.4, 0.25)?;
    let se: Vec<f64> = [1_000, 10_000, 100_000]
        .iter()
        .map(|&n| mc_tv_diag_gaussians(&p, &q, n, SEED).map(|e| e.stderr * (n as f64).sqrt()))
        .collect::<Result<_>>()?;
    let max = se.iter().copied().fold(0.0, f64::max);
    let min = se.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((max / min <= 2.0, format!("stderr * sqrt(n) spread {:.3} <= 2", max / min)))
}

fn covering_validity() -> Result<(bool, String)> {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (r, side) in [(1, 200), (2, 30), (3, 12)] {
        let cloud = grid_cloud(r, side, 10)?;
        for eps in [0.05, 0.2, 0.5] {
            let net = greedy_epsilon_net(&cloud, eps)?;
            let cover = max_distance_to_centers(&cloud, &net.indices);
            ok &= cover <= eps;
            worst = worst.max(cover / eps);
        }
    }
    Ok((ok, format!("max cover radius / eps {worst:.4} <= 1")))
}

fn covering_monotone() -> Result<(bool, String)> {
    let cloud = grid_cloud(2, 40, 4)?;
    let sizes: Vec<usize> = [0.02, 0.05, 0.1, 0.2, 0.4, 0.8]
        .iter()
        .map(|&e| greedy_epsilon_net(&cloud, e).map(|n| n.len()))
        .collect::<Result<_>>()?;
    let ok = sizes.windows(2).all(|w| w[1] <= w[0]);
    Ok((ok, format!("net sizes {sizes:?}")))
}

fn covering_embedding() -> Result<(bool, String)> {
    let cloud = grid_cloud(2, 25, 3)?;
    let wide = cloud.padded(47);
    let a = intrinsic_dim_estimate(&cloud, 10, 1.0, 1.0)?;
    let b = intrinsic_dim_estimate(&wide, 10, 1.0, 1.0)?;
    let na = greedy_epsilon_net(&cloud, 0.1)?.len();
    let nb = greedy_epsilon_net(&wide, 0.1)?.len();
    Ok((a == b && na == nb, format!("estimate {a:.4} vs {b:.4}, net {na} vs {nb}")))
}

fn experiments_determinism() -> Result<(bool, String)> {
    let cfg = Figure1Config {
        steps: vec![50, 100],
        dims: vec![10, 40],
        tv_samples: 5_000,
        seed: SEED,
        timing: false,
        ..Figure1Config::default()
    };
    let a = to_csv_string(&run_figure1_sweep(&cfg))?;
    let b = to_csv_string(&run_figure1_sweep(&cfg))?;
    let reordered = Figure1Config { steps: vec![100, 50], dims: vec![40, 10], ..cfg.clone() };
    let c = to_csv_string(&run_figure1_sweep(&reordered))?;
    let mut rows_a: Vec<&str> = a.lines().collect();
    let mut rows_c: Vec<&str> = c.lines().collect();
    rows_a.sort_unstable();
    rows_c.sort_unstable();
    let ok = a == b && rows_a == rows_c;
    Ok((ok, "identical bytes on rerun; same rows after grid reordering".into()))
}
