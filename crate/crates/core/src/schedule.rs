//! Discrete noise schedule.
//!
//! The per-step noise variance follows a two-phase design: `beta_1 = T^-c0`,
//! then
//!
//! `beta_{t+1} = (c1 ln T / T) * min{ beta_1 (1 + c1 ln T / T)^t , 1 }`
//!
//! i.e. exponential growth capped at the order of `ln T / T`. Cumulative
//! products `alpha_bar_t = prod_{i<=t} (1 - beta_i)` are accumulated in log
//! space; `1 - alpha_bar_t` is kept alongside via `expm1` so that values very
//! close to 1 retain full relative precision.

use crate::error::{Error, Result};

/// Default schedule exponent (`beta_1 = T^-c0`).
pub const DEFAULT_C0: f64 = 2.0;
/// Default schedule rate (`c1 ln T / T` growth factor and cap).
///
/// With `c1 = 4` every `beta_t` stays in (0,1) for `T >= 9` and the step-ratio
/// bound check passes for `T >= 32`. Both constants are configurable.
pub const DEFAULT_C1: f64 = 4.0;

/// Noise schedule over a horizon `T`, addressed with 1-based step indices.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    horizon: usize,
    c0: f64,
    c1: f64,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds the schedule; rejects parameter triples that push any `beta`
    /// outside (0,1) or collapse `alpha_bar` numerically.
    pub fn build(horizon: usize, c0: f64, c1: f64) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::InvalidScheduleParams(format!(
                "T = {horizon}, need T >= 2"
            )));
        }
        if !(c0.is_finite() && c0 > 0.0) || !(c1.is_finite() && c1 > 0.0) {
            return Err(Error::InvalidScheduleParams(format!(
                "c0 = {c0}, c1 = {c1}, need both positive"
            )));
        }
        let t_f = horizon as f64;
        let rate = c1 * t_f.ln() / t_f;
        let beta_1 = t_f.powf(-c0);

        let mut beta = Vec::with_capacity(horizon);
        beta.push(beta_1);
        // growth = beta_1 * (1 + rate)^t, advanced multiplicatively
        let mut growth = beta_1;
        for _ in 1..horizon {
            growth *= 1.0 + rate;
            beta.push(rate * growth.min(1.0));
        }
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::ScheduleOutOfRange { t: i + 1, beta: b });
            }
        }

        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();

        let mut alpha_bar = Vec::with_capacity(horizon);
        let mut one_minus_alpha_bar = Vec::with_capacity(horizon);
        // alpha_bar_1 = alpha_1 exactly, and 1 - alpha_bar_1 = beta_1 exactly.
        alpha_bar.push(alpha[0]);
        one_minus_alpha_bar.push(beta[0]);
        let mut log_sum = (-beta[0]).ln_1p();
        for &b in &beta[1..] {
            log_sum += (-b).ln_1p();
            alpha_bar.push(log_sum.exp());
            one_minus_alpha_bar.push(-log_sum.exp_m1());
        }
        for t in 1..horizon {
            if !(alpha_bar[t] < alpha_bar[t - 1] && alpha_bar[t] > 0.0) {
                return Err(Error::ScheduleDegenerate { t: t + 1 });
            }
        }

        Ok(NoiseSchedule {
            horizon,
            c0,
            c1,
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    /// `beta_t`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `alpha_t = 1 - beta_t`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar_t = prod_{i<=t} alpha_i`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `1 - alpha_bar_t`, computed without cancellation.
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t - 1]
    }

    /// `alpha_bar_{t-1}` with the empty-product convention `alpha_bar_0 = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            1.0
        } else {
            self.alpha_bar[t - 2]
        }
    }

    /// `1 - alpha_bar_{t-1}`; zero at `t = 1`.
    pub fn one_minus_alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 1 {
            0.0
        } else {
            self.one_minus_alpha_bar[t - 2]
        }
    }

    /// `alpha_t - alpha_bar_t`, evaluated as `alpha_t (1 - alpha_bar_{t-1})`
    /// which is exact at `t = 1` and avoids cancellation elsewhere.
    pub fn alpha_minus_alpha_bar(&self, t: usize) -> f64 {
        self.alpha(t) * self.one_minus_alpha_bar_prev(t)
    }

    /// Per-step ratio report for the bound
    /// `(1 - alpha_t) / (1 - alpha_bar_{t-1}) <= 4 c1 ln T / T`, `2 <= t <= T`.
    pub fn validate_step_ratio(&self) -> StepRatioReport {
        let t_f = self.horizon as f64;
        let bound = 4.0 * self.c1 * t_f.ln() / t_f;
        let rows: Vec<StepRatio> = (2..=self.horizon)
            .map(|t| {
                let ratio = self.beta(t) / self.one_minus_alpha_bar(t - 1);
                StepRatio {
                    t,
                    ratio,
                    pass: ratio <= bound,
                }
            })
            .collect();
        let all_pass = rows.iter().all(|r| r.pass);
        StepRatioReport {
            bound,
            rows,
            all_pass,
        }
    }
}

/// One row of [`NoiseSchedule::validate_step_ratio`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRatio {
    pub t: usize,
    pub ratio: f64,
    pub pass: bool,
}

/// Report-only output of the step-ratio check; failures are flagged, never raised.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRatioReport {
    pub bound: f64,
    pub rows: Vec<StepRatio>,
    pub all_pass: bool,
}
