//! Numerical laboratory for DDPM samplers on low-dimensional data.
//!
//! The crate covers noise schedules and coefficient designs, tractable
//! targets with exact scores, a seeded reverse-process sampler, exact
//! Gaussian law propagation with KL decompositions, Monte Carlo TV
//! estimates, ε-net covering estimates and the sweep harness that ties them
//! together.
//!
//! ```
//! use ddpm_core::{analytic, DesignKind, Schedule};
//!
//! let s = Schedule::linear(100, 1e-4, 0.02).unwrap();
//! let kl = analytic::terminal_kl(&s, &DesignKind::Star.build(&s), 8, 1000).unwrap();
//! assert!(kl < 0.01);
//! ```

pub mod analytic;
pub mod covering;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod oracle;
pub mod sampler;
pub mod schedules;
pub mod seed;
pub mod targets;

pub use analytic::{ChainKl, DiagGaussianLaw, StepKl};
pub use covering::{EpsilonNet, PointCloud};
pub use error::{Error, Result};
pub use metrics::{DiagGaussian, TvEstimate};
pub use sampler::{ReverseRun, ReverseRunConfig, Trajectory};
pub use schedules::{CoefficientDesign, DesignKind, Schedule, ScheduleKind};
pub use targets::{PerturbationModel, PointMixture, ScoreFn, ScoreOracle, Target};
