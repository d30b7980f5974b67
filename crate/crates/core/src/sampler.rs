//! Reverse-process execution.
//!
//! One reverse step maps `y` at time `t` to
//!
//! `y' = (y + eta_t s_t(y) + sigma_t z) / sqrt(alpha_t)`,
//!
//! with `z` a fresh standard normal (skipped entirely when `sigma_t = 0`).
//! The loop runs from `t = T` down to `t = 2`, producing the state at `t = 1`;
//! the final denoising step to `t = 0` is out of scope. For Gaussian-family
//! targets the score is affine and the state law stays a diagonal Gaussian,
//! so the run can instead propagate `(mean, cov)` exactly.

use crate::coeffs::CoefficientPlan;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::rng::RngPolicy;
use crate::schedule::NoiseSchedule;
use crate::score::ScoreOracle;
use crate::target::{GaussianLaw, TargetSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

/// Particles per work block; fixed so results cannot depend on thread count.
const BLOCK: usize = 1024;

/// Standard-normal ensemble of `n` particles in dimension `d`.
pub fn init_ensemble(d: usize, n: usize, rng: &mut ChaCha8Rng) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let mut e = Ensemble::zeros(n, d);
    for x in e.data.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
    Ok(e)
}

/// Analytic `N(0, I_d)` initialization.
pub fn init_analytic(d: usize) -> GaussianLaw {
    GaussianLaw::standard(d)
}

/// One reverse step applied to a single particle, drawing `d` fresh normals
/// iff `sigma_t > 0`.
pub fn reverse_step_particle(
    y: &mut [f64],
    t: usize,
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    oracle: &ScoreOracle,
    rng: &mut ChaCha8Rng,
) {
    let eta = plan.eta(t);
    let sigma = plan.sigma(t);
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let s = oracle.score(t, y);
    if sigma > 0.0 {
        for (yi, si) in y.iter_mut().zip(&s) {
            let z: f64 = rng.sample(StandardNormal);
            *yi = (*yi + eta * si + sigma * z) * inv_sqrt_alpha;
        }
    } else {
        for (yi, si) in y.iter_mut().zip(&s) {
            *yi = (*yi + eta * si) * inv_sqrt_alpha;
        }
    }
}

/// One reverse step applied to a whole ensemble through a single stream,
/// particle-major draw order.
pub fn reverse_step_ensemble(
    ensemble: &mut Ensemble,
    t: usize,
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    oracle: &ScoreOracle,
    rng: &mut ChaCha8Rng,
) {
    for i in 0..ensemble.n() {
        reverse_step_particle(ensemble.row_mut(i), t, schedule, plan, oracle, rng);
    }
}

/// One reverse step of the exact law map for an affine score.
pub fn reverse_step_analytic(
    law: &mut GaussianLaw,
    t: usize,
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    oracle: &ScoreOracle,
) -> Result<()> {
    let (jac, offset) = oracle.affine_score(t)?;
    let eta = plan.eta(t);
    let sigma = plan.sigma(t);
    let alpha = schedule.alpha(t);
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    for ((m, c), (j, b)) in law
        .mean
        .iter_mut()
        .zip(law.cov_diag.iter_mut())
        .zip(jac.iter().zip(&offset))
    {
        let gain = 1.0 + eta * j;
        *m = (gain * *m + eta * b) * inv_sqrt_alpha;
        *c = (gain * gain * *c + sigma * sigma) / alpha;
    }
    Ok(())
}

/// Output of an analytic reverse run.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticRun {
    /// Law of `Y_1`.
    pub final_law: GaussianLaw,
    /// `(t, law of Y_t)` for `t = T, ..., 1` when recording was requested.
    pub trajectory: Option<Vec<(usize, GaussianLaw)>>,
}

/// Folds the analytic law map from `t = T` down to `t = 2`, starting at `init`.
pub fn run_reverse_analytic(
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    oracle: &ScoreOracle,
    init: GaussianLaw,
    record_trajectory: bool,
) -> Result<AnalyticRun> {
    let horizon = schedule.horizon();
    let mut law = init;
    let mut trajectory = record_trajectory.then(Vec::new);
    if let Some(traj) = trajectory.as_mut() {
        traj.push((horizon, law.clone()));
    }
    for t in (2..=horizon).rev() {
        reverse_step_analytic(&mut law, t, schedule, plan, oracle)?;
        if let Some(traj) = trajectory.as_mut() {
            traj.push((t - 1, law.clone()));
        }
    }
    Ok(AnalyticRun {
        final_law: law,
        trajectory,
    })
}

/// Output of an ensemble reverse run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRun {
    /// Particles at `t = 1`.
    pub final_ensemble: Ensemble,
    /// `(t, per-coordinate sample variance)` for `t = T, ..., 1` when recorded.
    pub trajectory: Option<Vec<(usize, Vec<f64>)>>,
    /// Normal draws consumed across all particles (init + noise steps).
    pub draws: u64,
}

/// Runs the reverse process on `n` particles. Each particle owns the
/// counter-derived substream `("reverse", replicate, particle)` and folds
/// through all steps; blocks of particles run in parallel and reduce in fixed
/// block order, so the output is independent of the thread count.
#[allow(clippy::too_many_arguments)]
pub fn run_reverse_ensemble(
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    oracle: &ScoreOracle,
    n: usize,
    d: usize,
    policy: &RngPolicy,
    replicate: u64,
    record_trajectory: bool,
) -> Result<EnsembleRun> {
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let horizon = schedule.horizon();
    let n_steps = horizon.saturating_sub(1);
    let stochastic_steps = (2..=horizon).filter(|&t| plan.sigma(t) > 0.0).count() as u64;

    struct BlockOut {
        start: usize,
        data: Vec<f64>,
        // per time index (T..=1): sum and sum of squares per coordinate
        moments: Option<Vec<(Vec<f64>, Vec<f64>)>>,
    }

    let blocks: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let outs: Vec<BlockOut> = blocks
        .par_iter()
        .map(|&start| {
            let len = BLOCK.min(n - start);
            let mut data = vec![0.0; len * d];
            let mut moments =
                record_trajectory.then(|| vec![(vec![0.0; d], vec![0.0; d]); n_steps + 1]);
            let mut y = vec![0.0; d];
            for p in 0..len {
                let mut rng = policy.stream("reverse", replicate, (start + p) as u64);
                for yi in y.iter_mut() {
                    *yi = rng.sample(StandardNormal);
                }
                if let Some(m) = moments.as_mut() {
                    accumulate(&mut m[0], &y);
                }
                for (step, t) in (2..=horizon).rev().enumerate() {
                    reverse_step_particle(&mut y, t, schedule, plan, oracle, &mut rng);
                    if let Some(m) = moments.as_mut() {
                        accumulate(&mut m[step + 1], &y);
                    }
                }
                data[p * d..(p + 1) * d].copy_from_slice(&y);
            }
            BlockOut {
                start,
                data,
                moments,
            }
        })
        .collect();

    let mut final_ensemble = Ensemble::zeros(n, d);
    let mut merged: Option<Vec<(Vec<f64>, Vec<f64>)>> =
        record_trajectory.then(|| vec![(vec![0.0; d], vec![0.0; d]); n_steps + 1]);
    let mut sorted = outs;
    sorted.sort_by_key(|b| b.start);
    for block in &sorted {
        let len = block.data.len();
        final_ensemble.data[block.start * d..block.start * d + len].copy_from_slice(&block.data);
        if let (Some(m), Some(bm)) = (merged.as_mut(), block.moments.as_ref()) {
            for (acc, part) in m.iter_mut().zip(bm) {
                for (a, p) in acc.0.iter_mut().zip(&part.0) {
                    *a += p;
                }
                for (a, p) in acc.1.iter_mut().zip(&part.1) {
                    *a += p;
                }
            }
        }
    }

    let trajectory = merged.map(|m| {
        m.into_iter()
            .enumerate()
            .map(|(step, (sum, sumsq))| {
                let t = horizon - step;
                let nf = n as f64;
                let var: Vec<f64> = sum
                    .iter()
                    .zip(&sumsq)
                    .map(|(s, s2)| (s2 - s * s / nf) / (nf - 1.0))
                    .collect();
                (t, var)
            })
            .collect()
    });

    Ok(EnsembleRun {
        final_ensemble,
        trajectory,
        draws: (n as u64) * (d as u64) * (1 + stochastic_steps),
    })
}

fn accumulate(acc: &mut (Vec<f64>, Vec<f64>), y: &[f64]) {
    for ((s, s2), &v) in acc.0.iter_mut().zip(acc.1.iter_mut()).zip(y) {
        *s += v;
        *s2 += v * v;
    }
}

/// Exact output law of one reverse step applied to the true forward marginal
/// of a Gaussian-family target: per coordinate with marginal variance
/// `m2 = abar v + (1 - abar)`,
///
/// `var_out = ((1 - eta/m2)^2 m2 + sigma^2) / alpha`.
pub fn one_step_output_law(
    target: &TargetSpec,
    alpha: f64,
    abar: f64,
    eta: f64,
    sigma: f64,
) -> Result<GaussianLaw> {
    let variances = target.data_variances().ok_or(Error::RateSweepTarget)?;
    let cov = variances
        .iter()
        .map(|v| {
            let m2 = abar * v + (1.0 - abar);
            let gain = 1.0 - eta / m2;
            (gain * gain * m2 + sigma * sigma) / alpha
        })
        .collect();
    Ok(GaussianLaw {
        mean: vec![0.0; target.dim()],
        cov_diag: cov,
    })
}

/// Writes one draw of `Phi_t(X_t, Z)` into `buf`, with `X_t` sampled from the
/// exact forward marginal of a Gaussian-family target (per-coordinate
/// variance `abar v_i + 1 - abar`, under which the exact score is
/// `-x_i / (abar v_i + 1 - abar)`).
pub fn one_step_particle(
    variances: &[f64],
    alpha: f64,
    abar: f64,
    eta: f64,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    buf: &mut [f64],
) {
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let noise = 1.0 - abar;
    for (yi, &v) in buf.iter_mut().zip(variances) {
        let m2 = abar * v + noise;
        let z: f64 = rng.sample(StandardNormal);
        let x = m2.sqrt() * z;
        let mut y = x - eta * x / m2;
        if sigma > 0.0 {
            let w: f64 = rng.sample(StandardNormal);
            y += sigma * w;
        }
        *yi = y * inv_sqrt_alpha;
    }
}

/// Draws `X_t` from the true forward marginal, applies one reverse step with
/// the exact score, and returns the particles together with the closed-form
/// output law they follow.
pub fn one_step_from_truth(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    t: usize,
    eta: f64,
    sigma: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Ensemble, GaussianLaw)> {
    let variances = target.data_variances().ok_or(Error::RateSweepTarget)?;
    let alpha = schedule.alpha(t);
    let abar = schedule.alpha_bar(t);
    let law = one_step_output_law(target, alpha, abar, eta, sigma)?;
    let mut particles = Ensemble::zeros(n, target.dim());
    for i in 0..n {
        one_step_particle(
            &variances,
            alpha,
            abar,
            eta,
            sigma,
            rng,
            particles.row_mut(i),
        );
    }
    Ok((particles, law))
}
