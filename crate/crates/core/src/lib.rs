//! Numerical laboratory for reverse-diffusion samplers on tractable targets.
//!
//! The crate builds discrete noise schedules, derives the per-step reverse
//! coefficients of the DDIM/DDPM/generalized families, evaluates exact score
//! oracles for low-rank Gaussian, diagonal-Gaussian and atom-mixture targets,
//! runs the reverse process on particle ensembles or as an exact diagonal
//! Gaussian law map, and measures the result with total-variation proxies,
//! Monte-Carlo TV estimates and one-step lower bounds. Experiment drivers
//! emit reproducible CSV; all randomness flows through counter-derived
//! substreams keyed on a single master seed.

pub mod coeffs;
pub mod config;
pub mod csvout;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod target;

pub use coeffs::{CoefficientFamily, CoefficientPlan};
pub use ensemble::Ensemble;
pub use error::{Error, Result};
pub use rng::RngPolicy;
pub use schedule::NoiseSchedule;
pub use score::{Perturbation, PerturbationSpec, ScoreOracle};
pub use target::{GaussianLaw, MarginalLaw, TargetSpec};
