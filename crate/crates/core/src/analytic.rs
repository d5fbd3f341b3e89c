//! Closed-form law propagation and exact KL divergences for the degenerate
//! Gaussian target `N(0, I_k)` in `R^d`.
//!
//! With the exact (linear) score every reverse step is affine, so both the
//! forward marginals and the reverse-process laws stay zero-mean Gaussians
//! with one variance on the first `k` coordinates and another on the rest.

use crate::error::{check_step, invalid, Error, Result};
use crate::schedules::{star_design, CoefficientDesign, Schedule};
use crate::sampler::OVERFLOW_GUARD;

/// Zero-mean Gaussian with covariance `diag(on_var I_k, off_var I_{d-k})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagGaussianLaw {
    pub k: usize,
    pub d: usize,
    pub on_var: f64,
    pub off_var: f64,
}

impl DiagGaussianLaw {
    pub fn new(k: usize, d: usize, on_var: f64, off_var: f64) -> Result<Self> {
        if k > d || d == 0 {
            return Err(invalid(format!("block law needs k <= d and d >= 1, got k={k}, d={d}")));
        }
        if !(on_var > 0.0 && on_var.is_finite()) || !(off_var > 0.0 && off_var.is_finite()) {
            return Err(invalid(format!("variances must be positive, got ({on_var}, {off_var})")));
        }
        Ok(Self { k, d, on_var, off_var })
    }

    pub fn standard(k: usize, d: usize) -> Result<Self> {
        Self::new(k, d, 1.0, 1.0)
    }

    pub fn off_dim(&self) -> usize {
        self.d - self.k
    }

    /// Per-coordinate variances, on-support block first.
    pub fn variances(&self) -> Vec<f64> {
        let mut v = vec![self.on_var; self.k];
        v.resize(self.d, self.off_var);
        v
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.d != other.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: other.d });
        }
        if self.k != other.k {
            return Err(Error::DimensionMismatch { expected: self.k, got: other.k });
        }
        Ok(())
    }
}

/// `g(r) = (r - ln r - 1) / 2`, the KL between zero-mean 1-d Gaussians with
/// variance ratio `r`. Uses a series in `r - 1` near `r = 1`.
pub fn variance_ratio_kl(r: f64) -> f64 {
    let u = r - 1.0;
    if u.abs() < 1e-4 {
        // u - ln(1 + u) = u^2/2 - u^3/3 + u^4/4 - u^5/5 + ...
        let series = u * u * (0.5 - u * (1.0 / 3.0 - u * (0.25 - u * (0.2 - u / 6.0))));
        0.5 * series
    } else {
        0.5 * (u - u.ln_1p())
    }
}

/// Law of `X_t`: `on_var = 1`, `off_var = 1 - alpha_bar_t`.
pub fn forward_marginal_law(schedule: &Schedule, t: usize, k: usize, d: usize) -> Result<DiagGaussianLaw> {
    check_step(t, 1, schedule.steps())?;
    DiagGaussianLaw::new(k, d, 1.0, schedule.one_minus_alpha_bar(t))
}

/// Exact law of `Y_{stop_t}` under the exact score, starting from
/// `Y_T ~ N(0, I_d)`.
pub fn propagate_reverse_law(
    schedule: &Schedule,
    design: &CoefficientDesign,
    k: usize,
    d: usize,
    stop_t: usize,
) -> Result<DiagGaussianLaw> {
    let start = DiagGaussianLaw::standard(k, d)?;
    propagate_reverse_law_from(schedule, design, start, schedule.steps(), stop_t)
}

/// Pushes the law of `Y_{from_t}` through the reverse steps
/// `t = from_t, ..., stop_t + 1`:
///
/// ```text
/// on  <- ((1 - eta_t)^2 on + sigma_t^2) / alpha_t
/// off <- ((1 - eta_t / (1 - alpha_bar_t))^2 off + sigma_t^2) / alpha_t
/// ```
pub fn propagate_reverse_law_from(
    schedule: &Schedule,
    design: &CoefficientDesign,
    start: DiagGaussianLaw,
    from_t: usize,
    stop_t: usize,
) -> Result<DiagGaussianLaw> {
    check_design(schedule, design)?;
    check_step(from_t, 1, schedule.steps())?;
    check_step(stop_t, 1, from_t)?;
    let mut on = start.on_var;
    let mut off = start.off_var;
    for t in (stop_t + 1..=from_t).rev() {
        let alpha = schedule.alpha(t);
        let eta = design.eta(t);
        let s2 = design.sigma2(t);
        let on_factor = 1.0 - eta;
        let off_factor = 1.0 - eta / schedule.one_minus_alpha_bar(t);
        on = (on_factor * on_factor * on + s2) / alpha;
        off = (off_factor * off_factor * off + s2) / alpha;
        let worst = on.max(off);
        if !(worst.sqrt() <= OVERFLOW_GUARD) {
            return Err(Error::NumericOverflow { t, value: worst.sqrt() });
        }
    }
    if !(on > 0.0 && off > 0.0) {
        return Err(invalid(format!(
            "propagated law is degenerate at t={stop_t} (on_var={on}, off_var={off})"
        )));
    }
    DiagGaussianLaw::new(start.k, start.d, on, off)
}

/// `KL(p || q) = k g(p.on/q.on) + (d - k) g(p.off/q.off)`.
pub fn diag_gaussian_kl(p: &DiagGaussianLaw, q: &DiagGaussianLaw) -> Result<f64> {
    p.check_same_shape(q)?;
    let on = if p.k > 0 { p.k as f64 * variance_ratio_kl(p.on_var / q.on_var) } else { 0.0 };
    let off = if p.off_dim() > 0 { p.off_dim() as f64 * variance_ratio_kl(p.off_var / q.off_var) } else { 0.0 };
    Ok(on + off)
}

/// A Gaussian transition kernel `x -> N(mean_factor * x, var)` on one
/// coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearKernel {
    pub mean_factor: f64,
    pub var: f64,
}

/// `E_{x}[KL(N(a x, v) || N(b x, w))]` for `E[x^2] = second_moment`.
pub fn expected_kernel_kl(p: LinearKernel, q: LinearKernel, second_moment: f64) -> f64 {
    let dm = p.mean_factor - q.mean_factor;
    dm * dm * second_moment / (2.0 * q.var) + variance_ratio_kl(p.var / q.var)
}

/// Per-block conditional kernels of the forward process (`X_{t-1} | X_t`) and
/// of the reverse sampler (`Y_{t-1} | Y_t`) at step `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepKernels {
    pub forward_on: LinearKernel,
    pub forward_off: LinearKernel,
    pub reverse_on: LinearKernel,
    pub reverse_off: LinearKernel,
    /// `E[x^2]` of an off-support coordinate under `q_t` (on-support is 1).
    pub off_second_moment: f64,
}

pub fn step_kernels(schedule: &Schedule, design: &CoefficientDesign, t: usize) -> Result<StepKernels> {
    check_design(schedule, design)?;
    check_step(t, 2, schedule.steps())?;
    let alpha = schedule.alpha(t);
    let sqrt_alpha = alpha.sqrt();
    let beta = schedule.beta(t);
    let tail = schedule.one_minus_alpha_bar(t);
    let rho = schedule.one_minus_alpha_bar(t - 1) / tail;
    let eta = design.eta(t);
    let s2 = design.sigma2(t);
    if !(s2 > 0.0) {
        return Err(invalid(format!("sigma_{t} = 0 makes the reverse kernel degenerate")));
    }
    let reverse_var = s2 / alpha;
    Ok(StepKernels {
        forward_on: LinearKernel { mean_factor: sqrt_alpha, var: beta },
        forward_off: LinearKernel { mean_factor: sqrt_alpha * rho, var: beta * rho },
        reverse_on: LinearKernel { mean_factor: (1.0 - eta) / sqrt_alpha, var: reverse_var },
        reverse_off: LinearKernel { mean_factor: (1.0 - eta / tail) / sqrt_alpha, var: reverse_var },
        off_second_moment: tail,
    })
}

/// Block split of the expected conditional KL at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepKl {
    /// Contribution of the `k` on-support coordinates.
    pub on: f64,
    /// Contribution of the `d - k` off-support coordinates.
    pub off: f64,
}

impl StepKl {
    pub fn total(&self) -> f64 {
        self.on + self.off
    }
}

pub fn conditional_step_kl_split(
    schedule: &Schedule,
    design: &CoefficientDesign,
    t: usize,
    k: usize,
    d: usize,
) -> Result<StepKl> {
    if k > d {
        return Err(invalid(format!("k = {k} exceeds d = {d}")));
    }
    let kern = step_kernels(schedule, design, t)?;
    let on = k as f64 * expected_kernel_kl(kern.forward_on, kern.reverse_on, 1.0);
    let off = (d - k) as f64 * expected_kernel_kl(kern.forward_off, kern.reverse_off, kern.off_second_moment);
    Ok(StepKl { on, off })
}

/// `E_{x_t ~ q_t} KL(p_{X_{t-1}|X_t}(.|x_t) || p_{Y_{t-1}|Y_t}(.|x_t))` for
/// `2 <= t <= T`.
pub fn conditional_step_kl(
    schedule: &Schedule,
    design: &CoefficientDesign,
    t: usize,
    k: usize,
    d: usize,
) -> Result<f64> {
    conditional_step_kl_split(schedule, design, t, k, d).map(|s| s.total())
}

/// `d/4 (eta_t - eta*_t)^2 + d/40 (sigma*_t^2 / sigma_t^2 - 1)^2`, the
/// dimension-linear floor on the per-step KL for designs that deviate from
/// the star design.
pub fn step_kl_lower_bound(schedule: &Schedule, design: &CoefficientDesign, t: usize, d: usize) -> Result<f64> {
    check_design(schedule, design)?;
    check_step(t, 2, schedule.steps())?;
    let s2 = design.sigma2(t);
    if !(s2 > 0.0) {
        return Err(invalid(format!("sigma_{t} = 0 is not allowed in the lower bound")));
    }
    let star = star_design(schedule);
    let de = design.eta(t) - star.eta(t);
    let ratio = star.sigma2(t) / s2 - 1.0;
    let d = d as f64;
    Ok(d / 4.0 * de * de + d / 40.0 * ratio * ratio)
}

/// Terms of the chain-rule bound on `KL(q_1 || p_1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainKl {
    /// `KL(q_T || N(0, I_d))`.
    pub init_kl: f64,
    /// `sum_{t=2}^T` expected conditional KL.
    pub step_sum: f64,
    pub total: f64,
}

pub fn chain_kl_upper_bound(schedule: &Schedule, design: &CoefficientDesign, k: usize, d: usize) -> Result<ChainKl> {
    let steps = schedule.steps();
    let q_top = forward_marginal_law(schedule, steps, k, d)?;
    let init_kl = diag_gaussian_kl(&q_top, &DiagGaussianLaw::standard(k, d)?)?;
    let mut step_sum = 0.0;
    for t in 2..=steps {
        step_sum += conditional_step_kl(schedule, design, t, k, d)?;
    }
    Ok(ChainKl { init_kl, step_sum, total: init_kl + step_sum })
}

/// `KL(q_1 || p_1)` for the given design.
pub fn terminal_kl(schedule: &Schedule, design: &CoefficientDesign, k: usize, d: usize) -> Result<f64> {
    let q1 = forward_marginal_law(schedule, 1, k, d)?;
    let p1 = propagate_reverse_law(schedule, design, k, d, 1)?;
    diag_gaussian_kl(&q1, &p1)
}

fn check_design(schedule: &Schedule, design: &CoefficientDesign) -> Result<()> {
    if design.steps() != schedule.steps() {
        return Err(Error::DimensionMismatch { expected: schedule.steps(), got: design.steps() });
    }
    Ok(())
}
