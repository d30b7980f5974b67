//! Distances, bounds and diagnostics.
//!
//! For zero-mean diagonal Gaussians the Frobenius proxy
//! `D = ||Sigma1^-1 Sigma2 - I||_F` sandwiches the total-variation distance:
//! `min{1, D}/100 < TV <= (3/2) min{1, D}`. Monte-Carlo TV uses the one-sided
//! identity `TV(p, q) = E_{x~p}[(1 - q(x)/p(x))_+]` with a normal-approximation
//! confidence interval; the 1D quadrature oracle integrates `|p - q|/2`
//! directly.

use crate::coeffs::relation_residual_raw;
use crate::error::{Error, Result};
use crate::rng::RngPolicy;
use crate::schedule::NoiseSchedule;
use crate::score::posterior_cov_diag_at;
use crate::target::{GaussianLaw, TargetSpec};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Samples per Monte-Carlo work block (fixed: results must not depend on the
/// thread count).
const TV_BLOCK: usize = 8192;

/// Monte-Carlo TV estimate with 95% normal-approximation confidence interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvEstimate {
    pub estimate: f64,
    pub ci_half_width: f64,
    pub n_samples: usize,
}

/// Frobenius proxy between zero-mean diagonal Gaussians and the implied
/// sandwich on the true TV distance (upper report clipped to 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrobProxy {
    pub d: f64,
    pub tv_lower: f64,
    pub tv_upper: f64,
}

/// `D = sqrt(sum_i (cov2_i/cov1_i - 1)^2)` plus the sandwich
/// `[min{1,D}/100, min{1, 1.5 min{1,D}}]`. The reference law must have a
/// strictly positive covariance; means are ignored (the sandwich quotes the
/// same-mean case).
pub fn gaussian_frob_proxy(law1: &GaussianLaw, law2: &GaussianLaw) -> Result<FrobProxy> {
    let mut acc = 0.0;
    for (i, (&c1, &c2)) in law1.cov_diag.iter().zip(&law2.cov_diag).enumerate() {
        if c1 <= 0.0 {
            return Err(Error::ProxyUndefined(i));
        }
        let r = c2 / c1 - 1.0;
        acc += r * r;
    }
    let d = acc.sqrt();
    let clipped = d.min(1.0);
    Ok(FrobProxy {
        d,
        tv_lower: clipped / 100.0,
        tv_upper: (1.5 * clipped).min(1.0),
    })
}

/// Closed-form KL divergence between diagonal Gaussians,
/// `KL(law1 || law2) = sum_i (ln(v2/v1) + (v1 + (m1-m2)^2)/v2 - 1)/2`.
pub fn kl_diag_gaussian(law1: &GaussianLaw, law2: &GaussianLaw) -> Result<f64> {
    let mut acc = 0.0;
    for (i, ((&v1, &m1), (&v2, &m2))) in law1
        .cov_diag
        .iter()
        .zip(&law1.mean)
        .zip(law2.cov_diag.iter().zip(&law2.mean))
        .enumerate()
    {
        if v2 <= 0.0 {
            return Err(Error::ProxyUndefined(i));
        }
        let dm = m1 - m2;
        acc += 0.5 * ((v2 / v1).ln() + (v1 + dm * dm) / v2 - 1.0);
    }
    Ok(acc)
}

/// One-step TV lower bound at step `t >= 2` for arbitrary `(eta, sigma)`:
///
/// `(1/100) min{ sqrt(d/2) |relation_residual| / (alpha_t - abar_t), 1 }`.
///
/// The directional term reuses the signed coefficient-relation residual. At
/// `t = 1` the step is degenerate (`alpha_1 = abar_1`).
pub fn one_step_tv_lower_bound(
    schedule: &NoiseSchedule,
    t: usize,
    eta: f64,
    sigma: f64,
    d: usize,
) -> Result<f64> {
    if t < 2 {
        return Err(Error::DegenerateStep);
    }
    let amb = schedule.alpha_minus_alpha_bar(t);
    let residual = relation_residual_raw(schedule.one_minus_alpha_bar(t), amb, eta, sigma * sigma);
    let inner = (residual / amb).abs();
    Ok(0.01 * ((d as f64 / 2.0).sqrt() * inner).min(1.0))
}

/// Sequential Monte-Carlo TV estimator. `sample_p` writes one draw from `p`
/// into the buffer; `log_p`/`log_q` evaluate the densities.
pub fn tv_monte_carlo<P, Q, S>(
    log_p: P,
    log_q: Q,
    mut sample_p: S,
    d: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> TvEstimate
where
    P: Fn(&[f64]) -> f64,
    Q: Fn(&[f64]) -> f64,
    S: FnMut(&mut ChaCha8Rng, &mut [f64]),
{
    let mut buf = vec![0.0; d];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..n {
        sample_p(rng, &mut buf);
        let w = tv_weight(&log_p, &log_q, &buf);
        sum += w;
        sumsq += w * w;
    }
    finish_tv(sum, sumsq, n)
}

/// Block-parallel Monte-Carlo TV estimator; each block owns the substream
/// `(purpose, replicate, block)` and blocks reduce in fixed order, so the
/// result is byte-stable across thread counts.
#[allow(clippy::too_many_arguments)]
pub fn tv_monte_carlo_par<P, Q, S>(
    log_p: &P,
    log_q: &Q,
    sample_p: &S,
    d: usize,
    n: usize,
    policy: &RngPolicy,
    purpose: &str,
    replicate: u64,
) -> TvEstimate
where
    P: Fn(&[f64]) -> f64 + Sync,
    Q: Fn(&[f64]) -> f64 + Sync,
    S: Fn(&mut ChaCha8Rng, &mut [f64]) + Sync,
{
    let starts: Vec<usize> = (0..n).step_by(TV_BLOCK).collect();
    let mut parts: Vec<(usize, f64, f64)> = starts
        .par_iter()
        .map(|&start| {
            let len = TV_BLOCK.min(n - start);
            let mut rng = policy.stream(purpose, replicate, (start / TV_BLOCK) as u64);
            let mut buf = vec![0.0; d];
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..len {
                sample_p(&mut rng, &mut buf);
                let w = tv_weight(log_p, log_q, &buf);
                sum += w;
                sumsq += w * w;
            }
            (start, sum, sumsq)
        })
        .collect();
    parts.sort_by_key(|p| p.0);
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for (_, s, s2) in parts {
        sum += s;
        sumsq += s2;
    }
    finish_tv(sum, sumsq, n)
}

#[inline]
fn tv_weight<P: Fn(&[f64]) -> f64 + ?Sized, Q: Fn(&[f64]) -> f64 + ?Sized>(
    log_p: &P,
    log_q: &Q,
    x: &[f64],
) -> f64 {
    let ratio = (log_q(x) - log_p(x)).exp();
    (1.0 - ratio).max(0.0)
}

fn finish_tv(sum: f64, sumsq: f64, n: usize) -> TvEstimate {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sumsq - sum * sum / nf) / (nf - 1.0)).max(0.0);
    TvEstimate {
        estimate: mean,
        ci_half_width: 1.96 * (var / nf).sqrt(),
        n_samples: n,
    }
}

/// 1D TV oracle: adaptive trapezoid of `|p - q|/2` over `[lo, hi]`, doubling
/// the resolution until two successive estimates differ by less than `1e-8`.
pub fn tv_quadrature_1d<P, Q>(log_p: P, log_q: Q, lo: f64, hi: f64) -> f64
where
    P: Fn(f64) -> f64,
    Q: Fn(f64) -> f64,
{
    let f = |x: f64| 0.5 * (log_p(x).exp() - log_q(x).exp()).abs();
    let mut m = 2048usize;
    let mut prev = trapezoid(&f, lo, hi, m);
    loop {
        m *= 2;
        let next = trapezoid(&f, lo, hi, m);
        if (next - prev).abs() < 1e-8 || m >= 1 << 22 {
            return next;
        }
        prev = next;
    }
}

fn trapezoid<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, m: usize) -> f64 {
    let h = (hi - lo) / m as f64;
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..m {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

/// One point of the posterior-trace curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: usize,
    pub estimate: f64,
    pub std_error: f64,
}

/// Monte-Carlo curve of `E[tr Cov_{0|t}(X_t)]` over `t = 1..T`, `n` forward
/// samples per step, block-parallel with fixed-order reduction.
pub fn posterior_trace_curve(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    n: usize,
    policy: &RngPolicy,
) -> Vec<TracePoint> {
    let horizon = schedule.horizon();
    (1..=horizon)
        .map(|t| {
            let abar = schedule.alpha_bar(t);
            let starts: Vec<usize> = (0..n).step_by(TV_BLOCK).collect();
            let mut parts: Vec<(usize, f64, f64)> = starts
                .par_iter()
                .map(|&start| {
                    let len = TV_BLOCK.min(n - start);
                    let mut rng = policy.stream("trace", t as u64, (start / TV_BLOCK) as u64);
                    let xs = target.sample_forward(abar, &mut rng, len);
                    let mut sum = 0.0;
                    let mut sumsq = 0.0;
                    for i in 0..len {
                        let tr: f64 = posterior_cov_diag_at(target, abar, xs.row(i)).iter().sum();
                        sum += tr;
                        sumsq += tr * tr;
                    }
                    (start, sum, sumsq)
                })
                .collect();
            parts.sort_by_key(|p| p.0);
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for (_, s, s2) in parts {
                sum += s;
                sumsq += s2;
            }
            let nf = n as f64;
            let mean = sum / nf;
            let var = ((sumsq - sum * sum / nf) / (nf - 1.0)).max(0.0);
            TracePoint {
                t,
                estimate: mean,
                std_error: (var / nf).sqrt(),
            }
        })
        .collect()
}
