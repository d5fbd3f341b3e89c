//! Noise schedules and reverse-sampler coefficient designs.
//!
//! All step-indexed accessors are 1-based (`t = 1..=T`) so that values line up
//! with the usual DDPM notation in logs and CSV output. `alpha_bar(0)` is 1.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

/// Which family a [`Schedule`] was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// Geometric warm-up followed by a constant plateau, parameterized by
    /// `(c0, c1)`.
    Paper { c0: f64, c1: f64 },
    /// Linear interpolation between two endpoint betas.
    Linear { beta_min: f64, beta_max: f64 },
    /// Betas supplied directly.
    Custom,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Paper { .. } => "paper",
            ScheduleKind::Linear { .. } => "linear",
            ScheduleKind::Custom => "custom",
        }
    }
}

/// Forward-process learning rates `beta_t` and their derived products.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    kind: ScheduleKind,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    // alpha_bar[0] = 1, alpha_bar[t] = alpha_bar[t-1] * alpha[t]
    alpha_bar: Vec<f64>,
    // 1 - alpha_bar[t], accumulated in log space so it keeps full relative
    // precision while alpha_bar is still close to 1.
    one_minus_alpha_bar: Vec<f64>,
}

impl Schedule {
    /// Default `c0` for [`Schedule::paper`].
    pub const DEFAULT_C0: f64 = 2.0;
    /// Default `c1` for [`Schedule::paper`].
    pub const DEFAULT_C1: f64 = 4.0;
    /// Endpoints of the common practitioner linear schedule.
    pub const LINEAR_BETA_MIN: f64 = 1e-4;
    pub const LINEAR_BETA_MAX: f64 = 0.02;

    /// `beta_1 = T^{-c0}`, `beta_{t+1} = r * min(beta_1 (1 + r)^t, 1)` with
    /// `r = c1 ln T / T`.
    pub fn paper(steps: usize, c0: f64, c1: f64) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("T must be at least 2, got {steps}")));
        }
        if !(c0 > 0.0 && c0.is_finite()) || !(c1 > 0.0 && c1.is_finite()) {
            return Err(invalid(format!("schedule constants must be positive, got c0={c0}, c1={c1}")));
        }
        let big_t = steps as f64;
        let rate = c1 * big_t.ln() / big_t;
        let beta1 = big_t.powf(-c0);
        let mut beta = Vec::with_capacity(steps);
        beta.push(beta1);
        for t in 1..steps {
            let growth = beta1 * (1.0 + rate).powi(t as i32);
            beta.push(rate * growth.min(1.0));
        }
        Self::build(ScheduleKind::Paper { c0, c1 }, beta)
    }

    /// `beta_t = beta_min + (t-1)/(T-1) * (beta_max - beta_min)`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(invalid(format!("T must be at least 2, got {steps}")));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(invalid(format!(
                "linear schedule needs 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let span = (steps - 1) as f64;
        let beta = (0..steps)
            .map(|i| beta_min + (i as f64) / span * (beta_max - beta_min))
            .collect();
        Self::build(ScheduleKind::Linear { beta_min, beta_max }, beta)
    }

    /// Schedule from explicit betas (`beta[0]` is `beta_1`).
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(invalid(format!("T must be at least 2, got {}", beta.len())));
        }
        Self::build(ScheduleKind::Custom, beta)
    }

    fn build(kind: ScheduleKind, beta: Vec<f64>) -> Result<Self> {
        if let Some((i, b)) = beta.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
            return Err(invalid(format!("beta_{} = {b} is outside (0, 1)", i + 1)));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(beta.len() + 1);
        let mut one_minus_alpha_bar = Vec::with_capacity(beta.len() + 1);
        alpha_bar.push(1.0);
        one_minus_alpha_bar.push(0.0);
        let mut log_alpha_bar = 0.0;
        for (i, b) in beta.iter().enumerate() {
            alpha_bar.push(alpha_bar[i] * alpha[i]);
            log_alpha_bar += (-b).ln_1p();
            one_minus_alpha_bar.push(-log_alpha_bar.exp_m1());
        }
        Ok(Self { kind, beta, alpha, alpha_bar, one_minus_alpha_bar })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// `1 - alpha_bar(t)` with full relative precision near `alpha_bar = 1`.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    /// `alpha_bar_1..alpha_bar_T` (the leading `alpha_bar_0 = 1` is omitted).
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar[1..]
    }

    /// `alpha_bar_1..alpha_bar_T` via `exp(sum ln(1 - beta_i))`, an independent
    /// route to the direct running product. The log sum is compensated
    /// (Neumaier); a plain running sum drifts by about `T * eps * |ln alpha_bar|`.
    pub fn alpha_bars_log_space(&self) -> Vec<f64> {
        let (mut acc, mut comp) = (0.0f64, 0.0f64);
        self.beta
            .iter()
            .map(|b| {
                let term = (-b).ln_1p();
                let sum = acc + term;
                comp += if acc.abs() >= term.abs() { (acc - sum) + term } else { (term - sum) + acc };
                acc = sum;
                (acc + comp).exp()
            })
            .collect()
    }
}

/// Named coefficient designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DesignKind {
    /// `eta_t = 1 - alpha_t`, `sigma_t^2 = (1-alpha_t)(alpha_t - alpha_bar_t)/(1 - alpha_bar_t)`.
    Star,
    /// `eta_t = sigma_t^2 = 1 - alpha_t`.
    Simple,
}

impl DesignKind {
    pub fn name(&self) -> &'static str {
        match self {
            DesignKind::Star => "star",
            DesignKind::Simple => "simple",
        }
    }

    pub fn build(&self, schedule: &Schedule) -> CoefficientDesign {
        match self {
            DesignKind::Star => star_design(schedule),
            DesignKind::Simple => simple_design(schedule),
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "star" => Ok(DesignKind::Star),
            "simple" => Ok(DesignKind::Simple),
            other => Err(invalid(format!("unknown design {other:?} (expected star|simple)"))),
        }
    }
}

/// Per-step reverse-sampler coefficients `(eta_t, sigma_t^2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientDesign {
    eta: Vec<f64>,
    sigma2: Vec<f64>,
}

impl CoefficientDesign {
    pub fn new(eta: Vec<f64>, sigma2: Vec<f64>) -> Result<Self> {
        if eta.len() != sigma2.len() {
            return Err(Error::DimensionMismatch { expected: eta.len(), got: sigma2.len() });
        }
        if let Some((i, s)) = sigma2.iter().enumerate().find(|(_, s)| !(**s >= 0.0)) {
            return Err(invalid(format!("sigma2_{} = {s} must be nonnegative", i + 1)));
        }
        if let Some((i, e)) = eta.iter().enumerate().find(|(_, e)| !e.is_finite()) {
            return Err(invalid(format!("eta_{} = {e} is not finite", i + 1)));
        }
        Ok(Self { eta, sigma2 })
    }

    pub fn steps(&self) -> usize {
        self.eta.len()
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    pub fn sigma2(&self, t: usize) -> f64 {
        self.sigma2[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma2[t - 1].sqrt()
    }

    pub fn etas(&self) -> &[f64] {
        &self.eta
    }

    pub fn sigma2s(&self) -> &[f64] {
        &self.sigma2
    }

    /// Shift every `eta_t` by `eta_shift` and scale every `sigma_t` by
    /// `sigma_scale` (so `sigma_t^2` scales by `sigma_scale^2`).
    pub fn perturbed(&self, eta_shift: f64, sigma_scale: f64) -> Result<Self> {
        if !(sigma_scale > 0.0 && sigma_scale.is_finite()) {
            return Err(invalid(format!("sigma_scale must be positive, got {sigma_scale}")));
        }
        if !eta_shift.is_finite() {
            return Err(invalid(format!("eta_shift must be finite, got {eta_shift}")));
        }
        if eta_shift == 0.0 && sigma_scale == 1.0 {
            return Ok(self.clone());
        }
        let scale2 = sigma_scale * sigma_scale;
        Ok(Self {
            eta: self.eta.iter().map(|e| e + eta_shift).collect(),
            sigma2: self.sigma2.iter().map(|s| s * scale2).collect(),
        })
    }
}

/// The dimension-adaptive design. `eta_t` is stored as `beta_t` itself, which
/// equals `1 - alpha_t` with no extra rounding.
pub fn star_design(schedule: &Schedule) -> CoefficientDesign {
    let steps = schedule.steps();
    let mut eta = Vec::with_capacity(steps);
    let mut sigma2 = Vec::with_capacity(steps);
    for t in 1..=steps {
        let beta = schedule.beta(t);
        // alpha_t - alpha_bar_t = alpha_t (1 - alpha_bar_{t-1}); zero at t = 1.
        let gap = schedule.alpha(t) * schedule.one_minus_alpha_bar(t - 1);
        eta.push(beta);
        sigma2.push(beta * gap / schedule.one_minus_alpha_bar(t));
    }
    CoefficientDesign { eta, sigma2 }
}

pub fn simple_design(schedule: &Schedule) -> CoefficientDesign {
    let beta = schedule.betas().to_vec();
    CoefficientDesign { eta: beta.clone(), sigma2: beta }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_first_two_betas() {
        let s = Schedule::paper(1000, 2.0, 4.0).unwrap();
        assert_eq!(s.beta(1), 1e-6);
        // r * beta_1 * (1 + r), r = 4 ln 1000 / 1000, evaluated by hand.
        let r = 0.027_631_021_115_928_547_f64;
        let expected = r * 1e-6 * (1.0 + r);
        assert!((s.beta(2) - expected).abs() < 1e-20);
        assert!((s.beta(2) - 2.839_449_6e-8).abs() < 1e-14);
    }

    #[test]
    fn paper_schedule_terminal_alpha_bar_is_small() {
        let s = Schedule::paper(1000, 2.0, 4.0).unwrap();
        let log_bar: f64 = s.betas().iter().map(|b| (1.0 - b).ln()).sum();
        assert!(log_bar.exp() < 1e-3);
        assert!(s.alpha_bar(1000) < 1e-3);
    }

    #[test]
    fn paper_schedule_rejects_bad_parameters() {
        assert!(matches!(Schedule::paper(1, 2.0, 4.0), Err(Error::InvalidParameter(_))));
        assert!(Schedule::paper(100, 0.0, 4.0).is_err());
        assert!(Schedule::paper(100, 2.0, -1.0).is_err());
    }

    #[test]
    fn linear_schedule_endpoints() {
        let s = Schedule::linear(1000, 1e-4, 0.02).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-17);
        assert!((s.beta(500) - 0.010_040_040_040_040).abs() < 1e-15);
        let c = Schedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(c.betas(), &[0.5, 0.5]);
        assert_eq!(c.alpha_bar(2), 0.25);
    }

    #[test]
    fn linear_schedule_rejects_bad_endpoints() {
        assert!(Schedule::linear(10, 0.0, 0.02).is_err());
        assert!(Schedule::linear(10, 0.03, 0.02).is_err());
        assert!(Schedule::linear(10, 1e-4, 1.0).is_err());
        assert!(Schedule::linear(1, 1e-4, 0.02).is_err());
    }

    #[test]
    fn from_betas_validates_range() {
        assert!(Schedule::from_betas(vec![0.1, 1.0]).is_err());
        assert!(Schedule::from_betas(vec![0.1, f64::NAN]).is_err());
        assert!(Schedule::from_betas(vec![0.1, 0.2]).is_ok());
    }

    #[test]
    fn star_design_substitution() {
        // alpha_2 = 0.99 and alpha_bar_2 = 0.5 need alpha_1 = 0.5 / 0.99.
        let s = Schedule::from_betas(vec![1.0 - 0.5 / 0.99, 0.01]).unwrap();
        let d = star_design(&s);
        assert!((d.eta(2) - 0.01).abs() < 1e-15);
        assert!((d.sigma2(2) - 0.0098).abs() < 1e-12);
        assert_eq!(d.sigma2(1), 0.0);
    }

    #[test]
    fn star_design_vanishes_with_beta() {
        let s = Schedule::from_betas(vec![0.1, 1e-300]).unwrap();
        let d = star_design(&s);
        assert!(d.eta(2) < 1e-299);
        assert!(d.sigma2(2) < 1e-299);
    }

    #[test]
    fn simple_design_values() {
        let s = Schedule::linear(2, 0.5, 0.5).unwrap();
        let d = simple_design(&s);
        assert_eq!(d.etas(), &[0.5, 0.5]);
        assert_eq!(d.sigma2s(), &[0.5, 0.5]);
        let s = Schedule::from_betas(vec![0.3, 0.01]).unwrap();
        assert!((simple_design(&s).eta(2) - 0.01).abs() < 1e-17);
    }

    #[test]
    fn simple_exceeds_star_variance_after_first_step() {
        let s = Schedule::linear(200, 1e-4, 0.02).unwrap();
        let star = star_design(&s);
        let simple = simple_design(&s);
        for t in 2..=200 {
            assert!(star.sigma2(t) < simple.sigma2(t), "t={t}");
            assert!(star.sigma2(t) > 0.0);
        }
    }

    #[test]
    fn perturbation() {
        let s = Schedule::linear(50, 1e-4, 0.02).unwrap();
        let star = star_design(&s);
        assert_eq!(star.perturbed(0.0, 1.0).unwrap(), star);
        let shifted = star.perturbed(0.01, 1.0).unwrap();
        for t in 1..=50 {
            assert!((shifted.eta(t) - star.eta(t) - 0.01).abs() < 1e-15);
        }
        let scaled = star.perturbed(0.0, 2.0).unwrap();
        for t in 2..=50 {
            assert!((star.sigma2(t) / scaled.sigma2(t) - 0.25).abs() < 1e-15);
        }
        assert!(star.perturbed(0.0, 0.0).is_err());
        assert!(star.perturbed(0.0, -1.0).is_err());
    }

    #[test]
    fn design_kind_parsing() {
        assert_eq!("star".parse::<DesignKind>().unwrap(), DesignKind::Star);
        assert_eq!(" simple ".parse::<DesignKind>().unwrap(), DesignKind::Simple);
        assert!("cosine".parse::<DesignKind>().is_err());
    }
}
