//! Reverse-update coefficient families `(eta_t, sigma_t)`.
//!
//! Deterministic (DDIM-type) families set `sigma = 0`; stochastic (DDPM-type)
//! families inject fresh noise. The families that adapt to low-dimensional
//! structure all satisfy the relation
//!
//! `(1 - abar_t) (1 - eta_t/(1 - abar_t))^2 = alpha_t - abar_t - sigma_t^2`
//!
//! whose signed residual is exposed by [`relation_residual`]. The generalized
//! family integrates a semi-linear reverse SDE exactly over one step
//! (exponential integrator); its closed forms live in [`xi_segment_coefficients`].

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

/// Coefficient family selector.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientFamily {
    /// `eta = (1 - alpha) / (1 + sqrt((alpha - abar)/(1 - abar)))`, `sigma = 0`.
    DdimOriginal,
    /// `eta = (1 - alpha)/2`, `sigma = 0`.
    DdimHalfBeta,
    /// `eta = (-1 + 4 sqrt(alpha) - 3 alpha) / (2 sqrt(alpha))`, `sigma = 0`.
    DdimSongScore,
    /// `eta = 1 - alpha`, `sigma = sqrt((1 - alpha)(alpha - abar)/(1 - abar))`.
    DdpmOriginal,
    /// `eta = 2 (1 - sqrt(alpha))`, `sigma = sqrt(1 - alpha)`.
    DdpmBenton,
    /// `eta = 1 - alpha`, `sigma = sqrt(1 - alpha)`.
    DdpmLi,
    /// Exponential-integrator discretization of the generalized reverse SDE
    /// with constant noise weight `xi >= 0` (`xi = 0` recovers DdimOriginal,
    /// `xi = 1` recovers DdpmOriginal).
    GeneralizedXi(f64),
    /// Same, with a per-step `xi_t >= 0` array of length `T`.
    GeneralizedXiPerStep(Vec<f64>),
    /// Noise-split parametrization: `sigma = sqrt(alpha) varsigma`,
    /// `eta = (1 - abar) - sqrt((1 - abar)(alpha - abar - alpha varsigma^2))`.
    Varsigma(Vec<f64>),
    /// Explicit per-step arrays, no relation implied.
    Custom { eta: Vec<f64>, sigma: Vec<f64> },
}

impl CoefficientFamily {
    /// Short tag used in CSV output and config files.
    pub fn tag(&self) -> String {
        match self {
            CoefficientFamily::DdimOriginal => "ddim_original".into(),
            CoefficientFamily::DdimHalfBeta => "ddim_half_beta".into(),
            CoefficientFamily::DdimSongScore => "ddim_song_score".into(),
            CoefficientFamily::DdpmOriginal => "ddpm_original".into(),
            CoefficientFamily::DdpmBenton => "ddpm_benton".into(),
            CoefficientFamily::DdpmLi => "ddpm_li".into(),
            CoefficientFamily::GeneralizedXi(xi) => format!("generalized_xi({xi})"),
            CoefficientFamily::GeneralizedXiPerStep(_) => "generalized_xi(per-step)".into(),
            CoefficientFamily::Varsigma(_) => "varsigma".into(),
            CoefficientFamily::Custom { .. } => "custom".into(),
        }
    }

    /// Whether the family is required to satisfy the coefficient relation
    /// (zero residual up to rounding). The audited-only families are not.
    pub fn satisfies_relation(&self) -> bool {
        !matches!(
            self,
            CoefficientFamily::DdimHalfBeta
                | CoefficientFamily::DdimSongScore
                | CoefficientFamily::DdpmBenton
                | CoefficientFamily::DdpmLi
                | CoefficientFamily::Custom { .. }
        )
    }
}

/// Per-step reverse coefficients for a fixed schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPlan {
    pub family: CoefficientFamily,
    /// `eta_t`, index `t-1`.
    pub eta: Vec<f64>,
    /// `sigma_t >= 0`, index `t-1`.
    pub sigma: Vec<f64>,
}

impl CoefficientPlan {
    pub fn eta(&self, t: usize) -> f64 {
        self.eta[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn horizon(&self) -> usize {
        self.eta.len()
    }
}

fn ddim_original_eta(s: &NoiseSchedule, t: usize) -> f64 {
    let ratio = s.alpha_minus_alpha_bar(t) / s.one_minus_alpha_bar(t);
    s.beta(t) / (1.0 + ratio.sqrt())
}

fn ddpm_original_pair(s: &NoiseSchedule, t: usize) -> (f64, f64) {
    let sigma_sq = s.beta(t) * s.alpha_minus_alpha_bar(t) / s.one_minus_alpha_bar(t);
    (s.beta(t), sigma_sq.sqrt())
}

/// Fills the per-step `(eta, sigma)` arrays for `family` on schedule `s`.
pub fn plan_for_family(s: &NoiseSchedule, family: &CoefficientFamily) -> Result<CoefficientPlan> {
    let horizon = s.horizon();
    let mut eta = Vec::with_capacity(horizon);
    let mut sigma = Vec::with_capacity(horizon);
    match family {
        CoefficientFamily::DdimOriginal => {
            for t in 1..=horizon {
                eta.push(ddim_original_eta(s, t));
                sigma.push(0.0);
            }
        }
        CoefficientFamily::DdimHalfBeta => {
            for t in 1..=horizon {
                eta.push(s.beta(t) / 2.0);
                sigma.push(0.0);
            }
        }
        CoefficientFamily::DdimSongScore => {
            for t in 1..=horizon {
                let sqrt_alpha = s.alpha(t).sqrt();
                eta.push((-1.0 + 4.0 * sqrt_alpha - 3.0 * s.alpha(t)) / (2.0 * sqrt_alpha));
                sigma.push(0.0);
            }
        }
        CoefficientFamily::DdpmOriginal => {
            for t in 1..=horizon {
                let (e, sg) = ddpm_original_pair(s, t);
                eta.push(e);
                sigma.push(sg);
            }
        }
        CoefficientFamily::DdpmBenton => {
            for t in 1..=horizon {
                eta.push(2.0 * (1.0 - s.alpha(t).sqrt()));
                sigma.push(s.beta(t).sqrt());
            }
        }
        CoefficientFamily::DdpmLi => {
            for t in 1..=horizon {
                eta.push(s.beta(t));
                sigma.push(s.beta(t).sqrt());
            }
        }
        CoefficientFamily::GeneralizedXi(xi) => {
            for t in 1..=horizon {
                let (e, sg) = generalized_xi_step(s, t, *xi)?;
                eta.push(e);
                sigma.push(sg);
            }
        }
        CoefficientFamily::GeneralizedXiPerStep(xis) => {
            if xis.len() != horizon {
                return Err(Error::FamilyInadmissible {
                    t: 0,
                    reason: format!("xi array length {} != T = {horizon}", xis.len()),
                });
            }
            for t in 1..=horizon {
                let (e, sg) = generalized_xi_step(s, t, xis[t - 1])?;
                eta.push(e);
                sigma.push(sg);
            }
        }
        CoefficientFamily::Varsigma(varsigma) => return varsigma_to_plan(s, varsigma),
        CoefficientFamily::Custom { eta: e, sigma: sg } => {
            if e.len() != horizon || sg.len() != horizon {
                return Err(Error::FamilyInadmissible {
                    t: 0,
                    reason: format!(
                        "custom arrays have lengths ({}, {}), T = {horizon}",
                        e.len(),
                        sg.len()
                    ),
                });
            }
            if let Some(i) = sg.iter().position(|x| x.is_nan() || *x < 0.0) {
                return Err(Error::FamilyInadmissible {
                    t: i + 1,
                    reason: format!("sigma = {} must be nonnegative", sg[i]),
                });
            }
            eta = e.clone();
            sigma = sg.clone();
        }
    }
    Ok(CoefficientPlan {
        family: family.clone(),
        eta,
        sigma,
    })
}

/// One step of the generalized family on the schedule. At `t = 1` the
/// segment endpoint sits at `abar_0 = 1`, where the integrator's weight
/// function diverges; the relation then forces `(eta, sigma) = (1 - alpha_1, 0)`,
/// which is taken by branch.
fn generalized_xi_step(s: &NoiseSchedule, t: usize, xi: f64) -> Result<(f64, f64)> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::FamilyInadmissible {
            t,
            reason: format!("xi = {xi} must be finite and nonnegative"),
        });
    }
    if t == 1 {
        return Ok((s.beta(1), 0.0));
    }
    let (_, eta, sigma) = xi_step_from_abars(
        s.alpha_bar(t),
        s.one_minus_alpha_bar(t),
        s.alpha_bar_prev(t),
        s.one_minus_alpha_bar_prev(t),
        xi,
    );
    Ok((eta, sigma))
}

/// Exponential-integrator closed forms for one reverse segment, in terms of
/// `gamma_n = sqrt(abar_t)` (start, noisier) and `gamma_np1 = sqrt(abar_{t-1})`
/// (end, cleaner). Returns `(alpha_step, eta, sigma)` with
/// `alpha_step = (gamma_n / gamma_np1)^2`.
pub fn xi_segment_coefficients(gamma_n: f64, gamma_np1: f64, xi: f64) -> Result<(f64, f64, f64)> {
    if !(gamma_n > 0.0 && gamma_n < 1.0 && gamma_np1 > 0.0 && gamma_np1 < 1.0)
        || gamma_n >= gamma_np1
    {
        return Err(Error::InvalidSegment { gamma_n, gamma_np1 });
    }
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::FamilyInadmissible {
            t: 0,
            reason: format!("xi = {xi} must be finite and nonnegative"),
        });
    }
    let abar_n = gamma_n * gamma_n;
    let abar_np1 = gamma_np1 * gamma_np1;
    // (1-g)(1+g) loses nothing and is exact for g near 0 or 1
    let om_n = (1.0 - gamma_n) * (1.0 + gamma_n);
    let om_np1 = (1.0 - gamma_np1) * (1.0 + gamma_np1);
    Ok(xi_step_from_abars(abar_n, om_n, abar_np1, om_np1, xi))
}

/// Core of the segment computation, parametrized by `(abar, 1-abar)` pairs so
/// schedule callers can pass their cancellation-free `1 - abar` values.
///
/// With `f(gamma) = gamma^xi / (1-gamma^2)^((1+xi)/2)`:
///   A = gamma_np1^(xi+1)/(1-gamma_np1^2)^((1+xi)/2) - gamma_n^(xi+1)/(1-gamma_n^2)^((1+xi)/2)
///   B = gamma_np1^(2 xi)/(1-gamma_np1^2)^xi        - gamma_n^(2 xi)/(1-gamma_n^2)^xi
///   eta   = (1-gamma_n^2)/gamma_np1 * A / f(gamma_np1)
///   sigma = gamma_n/(gamma_np1 * f(gamma_np1)) * sqrt(B)
fn xi_step_from_abars(
    abar_n: f64,
    om_n: f64,
    abar_np1: f64,
    om_np1: f64,
    xi: f64,
) -> (f64, f64, f64) {
    let gamma_n = abar_n.sqrt();
    let gamma_np1 = abar_np1.sqrt();
    let half_p = (1.0 + xi) / 2.0;
    let f_next = abar_np1.powf(xi / 2.0) / om_np1.powf(half_p);
    let a = abar_np1.powf(half_p) / om_np1.powf(half_p) - abar_n.powf(half_p) / om_n.powf(half_p);
    let b = abar_np1.powf(xi) / om_np1.powf(xi) - abar_n.powf(xi) / om_n.powf(xi);
    let alpha_step = abar_n / abar_np1;
    let eta = om_n / gamma_np1 * a / f_next;
    // b >= 0 algebraically (gamma^2/(1-gamma^2) increases in gamma); clamp rounding
    let sigma = gamma_n / (gamma_np1 * f_next) * b.max(0.0).sqrt();
    (alpha_step, eta, sigma)
}

/// Builds the plan for the noise-split parametrization. Requires
/// `alpha_t - abar_t - alpha_t varsigma_t^2 >= 0` at every step.
pub fn varsigma_to_plan(s: &NoiseSchedule, varsigma: &[f64]) -> Result<CoefficientPlan> {
    let horizon = s.horizon();
    if varsigma.len() != horizon {
        return Err(Error::FamilyInadmissible {
            t: 0,
            reason: format!("varsigma length {} != T = {horizon}", varsigma.len()),
        });
    }
    let mut eta = Vec::with_capacity(horizon);
    let mut sigma = Vec::with_capacity(horizon);
    for t in 1..=horizon {
        let vs = varsigma[t - 1];
        if !(vs.is_finite() && vs >= 0.0) {
            return Err(Error::FamilyInadmissible {
                t,
                reason: format!("varsigma = {vs} must be finite and nonnegative"),
            });
        }
        let radicand = s.alpha_minus_alpha_bar(t) - s.alpha(t) * vs * vs;
        if radicand < 0.0 {
            return Err(Error::VarsigmaInadmissible { t, radicand });
        }
        let omt = s.one_minus_alpha_bar(t);
        eta.push(omt - (omt * radicand).sqrt());
        sigma.push(s.alpha(t).sqrt() * vs);
    }
    Ok(CoefficientPlan {
        family: CoefficientFamily::Varsigma(varsigma.to_vec()),
        eta,
        sigma,
    })
}

/// Signed residual of the coefficient relation at step `t`:
/// `(1 - abar_t)(1 - eta_t/(1 - abar_t))^2 - (alpha_t - abar_t - sigma_t^2)`.
///
/// Kept signed so the one-step lower bound can reuse it as its directional
/// term. Zero (up to rounding) characterizes the relation-satisfying families.
pub fn relation_residual(plan: &CoefficientPlan, s: &NoiseSchedule, t: usize) -> f64 {
    relation_residual_raw(
        s.one_minus_alpha_bar(t),
        s.alpha_minus_alpha_bar(t),
        plan.eta(t),
        plan.sigma(t) * plan.sigma(t),
    )
}

/// Residual in terms of raw quantities; `amb = alpha_t - abar_t`.
pub fn relation_residual_raw(one_minus_abar: f64, amb: f64, eta: f64, sigma_sq: f64) -> f64 {
    let shrink = 1.0 - eta / one_minus_abar;
    one_minus_abar * shrink * shrink - (amb - sigma_sq)
}

/// One row of [`step_size_cap_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub t: usize,
    pub eta: f64,
    /// `min{ c_big (1 - alpha_t), (1 - abar_t)/2 }`.
    pub cap: f64,
    pub flagged: bool,
}

/// Report-only audit of the step-size constraint
/// `eta_t <= min{ c_big (1 - alpha_t), (1 - abar_t)/2 }` with `c_big >= 1/2`.
pub fn step_size_cap_check(
    plan: &CoefficientPlan,
    s: &NoiseSchedule,
    c_big: f64,
) -> Vec<ConstraintRow> {
    (1..=s.horizon())
        .map(|t| {
            let cap = (c_big * s.beta(t)).min(s.one_minus_alpha_bar(t) / 2.0);
            let eta = plan.eta(t);
            ConstraintRow {
                t,
                eta,
                cap,
                flagged: eta > cap,
            }
        })
        .collect()
}
