use thiserror::Error;

/// Errors surfaced by schedule construction, coefficient planning, target
/// evaluation, sampling and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schedule out of range: beta[{t}] = {beta} not in (0, 1)")]
    ScheduleOutOfRange { t: usize, beta: f64 },

    #[error("schedule out of range: alpha_bar not strictly decreasing at step {t}")]
    ScheduleDegenerate { t: usize },

    #[error("invalid schedule parameters: {0}")]
    InvalidScheduleParams(String),

    #[error("family inadmissible at step {t}: {reason}")]
    FamilyInadmissible { t: usize, reason: String },

    #[error("invalid segment: require 0 < gamma_n < gamma_np1 < 1, got ({gamma_n}, {gamma_np1})")]
    InvalidSegment { gamma_n: f64, gamma_np1: f64 },

    #[error(
        "varsigma inadmissible at step {t}: alpha - alpha_bar - alpha*varsigma^2 = {radicand}"
    )]
    VarsigmaInadmissible { t: usize, radicand: f64 },

    #[error("invalid noise level: abar = {0} not in (0, 1]")]
    InvalidNoiseLevel(f64),

    #[error("density undefined: degenerate coordinate {coord} at abar = {abar}")]
    DensityUndefined { abar: f64, coord: usize },

    #[error("invalid target: {0}")]
    InvalidTarget(String),

    #[error("proxy undefined: reference covariance entry {0} is zero")]
    ProxyUndefined(usize),

    #[error("degenerate step: t = 1 has alpha_1 = alpha_bar_1")]
    DegenerateStep,

    #[error("empty ensemble")]
    EmptyEnsemble,

    #[error("analytic propagation unavailable: {0}")]
    AnalyticUnavailable(String),

    #[error("rate sweep requires analytic law: target is not in the Gaussian family")]
    RateSweepTarget,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a malformed or inconsistent run configuration
    /// (mapped to exit code 2 by the CLI; everything else is exit code 3).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
