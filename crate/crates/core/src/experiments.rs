//! Experiment drivers behind the CLI subcommands.
//!
//! Every driver returns structured rows plus a [`CsvDoc`]; all Monte-Carlo
//! work runs through counter-derived block substreams with fixed-order
//! reduction, so repeated runs produce byte-identical CSV output at any
//! thread count.

use crate::coeffs::{
    plan_for_family, relation_residual, step_size_cap_check, CoefficientFamily, CoefficientPlan,
};
use crate::csvout::{fmt_g17, CsvDoc};
use crate::error::{Error, Result};
use crate::metrics::{
    gaussian_frob_proxy, one_step_tv_lower_bound, posterior_trace_curve, tv_monte_carlo_par,
    TracePoint, TvEstimate,
};
use crate::rng::RngPolicy;
use crate::sampler::{
    init_analytic, one_step_output_law, one_step_particle, run_reverse_analytic,
    run_reverse_ensemble, AnalyticRun,
};
use crate::schedule::NoiseSchedule;
use crate::score::{PerturbationSpec, ScoreOracle};
use crate::target::{GaussianLaw, MarginalLaw, TargetSpec};

/// Initialization of analytic reverse runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitLaw {
    /// The sampler's actual initialization, `N(0, I)`.
    StandardNormal,
    /// Diagnostic: start at the exact law of `X_T` to isolate per-step
    /// discretization error from the initialization mismatch.
    ForwardMarginal,
}

impl InitLaw {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "standard_normal" => Ok(InitLaw::StandardNormal),
            "forward_marginal" => Ok(InitLaw::ForwardMarginal),
            other => Err(Error::config(
                "sampler.init",
                format!("unknown init `{other}`"),
            )),
        }
    }
}

fn initial_law(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    init: InitLaw,
) -> Result<GaussianLaw> {
    match init {
        InitLaw::StandardNormal => Ok(init_analytic(target.dim())),
        InitLaw::ForwardMarginal => {
            match target.forward_marginal(schedule.alpha_bar(schedule.horizon()))? {
                MarginalLaw::Gaussian(law) => Ok(law),
                MarginalLaw::GaussianMixture { .. } => Err(Error::RateSweepTarget),
            }
        }
    }
}

/// Gaussian forward marginal or error for mixture targets.
fn gaussian_marginal(target: &TargetSpec, abar: f64) -> Result<GaussianLaw> {
    match target.forward_marginal(abar)? {
        MarginalLaw::Gaussian(law) => Ok(law),
        MarginalLaw::GaussianMixture { .. } => Err(Error::RateSweepTarget),
    }
}

/// Ordinary least squares slope of `ln y` on `ln x`, dropping y below the
/// floor (numerically exact rows would corrupt the fit). `None` with fewer
/// than two usable points.
pub fn ols_slope_loglog(points: &[(f64, f64)], floor: f64) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| *y >= floor)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    if usable.len() < 2 {
        return None;
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let sxx: f64 = usable.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = usable.iter().map(|p| p.0 * p.1).sum();
    Some((n * sxy - sx * sy) / (n * sxx - sx * sx))
}

/// `schedule` subcommand: t,beta,alpha,alpha_bar.
pub fn schedule_dump(schedule: &NoiseSchedule) -> CsvDoc {
    let mut doc = CsvDoc::new(&["t", "beta", "alpha", "alpha_bar"]);
    for t in 1..=schedule.horizon() {
        doc.push_row(&[
            t.to_string(),
            fmt_g17(schedule.beta(t)),
            fmt_g17(schedule.alpha(t)),
            fmt_g17(schedule.alpha_bar(t)),
        ]);
    }
    doc
}

/// `coeffs` subcommand: t,eta,sigma,residual,constraint23.
pub fn coeffs_dump(schedule: &NoiseSchedule, plan: &CoefficientPlan, c_big: f64) -> CsvDoc {
    let mut doc = CsvDoc::new(&["t", "eta", "sigma", "residual", "constraint23"]);
    let rows = step_size_cap_check(plan, schedule, c_big);
    for t in 1..=schedule.horizon() {
        doc.push_row(&[
            t.to_string(),
            fmt_g17(plan.eta(t)),
            fmt_g17(plan.sigma(t)),
            fmt_g17(relation_residual(plan, schedule, t)),
            (!rows[t - 1].flagged).to_string(),
        ]);
    }
    doc
}

/// `sample --analytic` trajectory: t,coord,variance.
pub fn sample_analytic(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    perturbation: Option<PerturbationSpec>,
    init: InitLaw,
) -> Result<(AnalyticRun, CsvDoc)> {
    let oracle = ScoreOracle {
        target: target.clone(),
        schedule: schedule.clone(),
        perturbation,
    };
    let init_law = initial_law(target, schedule, init)?;
    let run = run_reverse_analytic(schedule, plan, &oracle, init_law, true)?;
    let mut doc = CsvDoc::new(&["t", "coord", "variance"]);
    for (t, law) in run.trajectory.as_ref().unwrap() {
        for (coord, v) in law.cov_diag.iter().enumerate() {
            doc.push_row(&[t.to_string(), coord.to_string(), fmt_g17(*v)]);
        }
    }
    Ok((run, doc))
}

/// `sample` on particles: per-step per-coordinate ensemble variance.
#[allow(clippy::too_many_arguments)]
pub fn sample_ensemble(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    plan: &CoefficientPlan,
    perturbation: Option<PerturbationSpec>,
    n: usize,
    policy: &RngPolicy,
    dump_particles: bool,
) -> Result<(CsvDoc, Option<CsvDoc>)> {
    let oracle = ScoreOracle {
        target: target.clone(),
        schedule: schedule.clone(),
        perturbation,
    };
    let run = run_reverse_ensemble(schedule, plan, &oracle, n, target.dim(), policy, 0, true)?;
    let mut doc = CsvDoc::new(&["t", "coord", "variance"]);
    for (t, var) in run.trajectory.as_ref().unwrap() {
        for (coord, v) in var.iter().enumerate() {
            doc.push_row(&[t.to_string(), coord.to_string(), fmt_g17(*v)]);
        }
    }
    let particles = dump_particles.then(|| {
        let mut pdoc = CsvDoc::new(&["particle", "coord", "value"]);
        for (i, row) in run.final_ensemble.rows().enumerate() {
            for (coord, v) in row.iter().enumerate() {
                pdoc.push_row(&[i.to_string(), coord.to_string(), fmt_g17(*v)]);
            }
        }
        pdoc
    });
    Ok((doc, particles))
}

/// One row of the rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RateSweepRow {
    pub horizon: usize,
    pub d: usize,
    pub k: usize,
    pub family: String,
    pub proxy_d: f64,
    pub tv_lower: f64,
    pub tv_upper: f64,
    pub tv_mc: f64,
    pub tv_ci: f64,
}

#[derive(Debug, Clone)]
pub struct RateSweepResult {
    pub rows: Vec<RateSweepRow>,
    /// `(family tag, fitted log-log slope)` per family.
    pub slopes: Vec<(String, Option<f64>)>,
    pub doc: CsvDoc,
}

/// Rate-decay experiment: analytic propagation across a `T` grid, Frobenius
/// proxy between the final law and the forward marginal at `abar_1`, plus an
/// OLS slope of `ln D` against `ln T` per family.
#[allow(clippy::too_many_arguments)]
pub fn rate_sweep(
    target: &TargetSpec,
    families: &[CoefficientFamily],
    t_grid: &[usize],
    c0: f64,
    c1: f64,
    init: InitLaw,
    n_mc: usize,
    policy: &RngPolicy,
) -> Result<RateSweepResult> {
    if !target.is_gaussian_family() {
        return Err(Error::RateSweepTarget);
    }
    let d = target.dim();
    let k = target.k_intrinsic();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for family in families {
        let mut fit_points = Vec::new();
        for (grid_index, &horizon) in t_grid.iter().enumerate() {
            let schedule = NoiseSchedule::build(horizon, c0, c1)?;
            let plan = plan_for_family(&schedule, family)?;
            let oracle = ScoreOracle::exact(target.clone(), schedule.clone());
            let init_law = initial_law(target, &schedule, init)?;
            let run = run_reverse_analytic(&schedule, &plan, &oracle, init_law, false)?;
            let reference = gaussian_marginal(target, schedule.alpha_bar(1))?;
            let proxy = gaussian_frob_proxy(&reference, &run.final_law)?;
            let tv = tv_between_gaussians_mc(
                &reference,
                &run.final_law,
                n_mc,
                policy,
                "sweep",
                (slopes.len() * t_grid.len() + grid_index) as u64,
            );
            fit_points.push((horizon as f64, proxy.d));
            rows.push(RateSweepRow {
                horizon,
                d,
                k,
                family: family.tag(),
                proxy_d: proxy.d,
                tv_lower: proxy.tv_lower,
                tv_upper: proxy.tv_upper,
                tv_mc: tv.estimate,
                tv_ci: tv.ci_half_width,
            });
        }
        slopes.push((family.tag(), ols_slope_loglog(&fit_points, 1e-13)));
    }
    let mut doc = CsvDoc::new(&[
        "T", "d", "k", "family", "proxy_D", "tv_lower", "tv_upper", "tv_mc", "tv_ci",
    ]);
    for r in &rows {
        doc.push_row(&[
            r.horizon.to_string(),
            r.d.to_string(),
            r.k.to_string(),
            r.family.clone(),
            fmt_g17(r.proxy_d),
            fmt_g17(r.tv_lower),
            fmt_g17(r.tv_upper),
            fmt_g17(r.tv_mc),
            fmt_g17(r.tv_ci),
        ]);
    }
    for (family, slope) in &slopes {
        match slope {
            Some(s) => doc.push_comment(&format!("slope family={family} value={}", fmt_g17(*s))),
            None => doc.push_comment(&format!("slope family={family} value=nan")),
        }
    }
    Ok(RateSweepResult { rows, slopes, doc })
}

/// MC TV estimate between two diagonal Gaussians, sampling from `p`.
fn tv_between_gaussians_mc(
    p: &GaussianLaw,
    q: &GaussianLaw,
    n: usize,
    policy: &RngPolicy,
    purpose: &str,
    replicate: u64,
) -> TvEstimate {
    use rand_distr::Distribution;
    let sd: Vec<f64> = p.cov_diag.iter().map(|v| v.sqrt()).collect();
    let mean = p.mean.clone();
    let log_p = |x: &[f64]| p.log_density(x).unwrap();
    let log_q = |x: &[f64]| q.log_density(x).unwrap();
    let sample = move |rng: &mut rand_chacha::ChaCha8Rng, buf: &mut [f64]| {
        for ((b, s), m) in buf.iter_mut().zip(&sd).zip(&mean) {
            let z: f64 = rand_distr::StandardNormal.sample(rng);
            *b = m + s * z;
        }
    };
    tv_monte_carlo_par(
        &log_p,
        &log_q,
        &sample,
        p.dim(),
        n,
        policy,
        purpose,
        replicate,
    )
}

/// One grid cell of the one-step lower-bound experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepRow {
    pub eta_scale: f64,
    pub sigma_scale: f64,
    pub lower_bound: f64,
    pub tv_mc: f64,
    pub tv_ci: f64,
    pub violation: bool,
}

#[derive(Debug, Clone)]
pub struct OneStepResult {
    pub t_step: usize,
    pub alpha: f64,
    pub alpha_bar: f64,
    pub rows: Vec<OneStepRow>,
    pub doc: CsvDoc,
}

/// One-step lower-bound grid: scales the DdpmOriginal pair at step `t_step`,
/// estimates `TV(Phi_t(X_t, Z), X_{t-1})` by Monte Carlo against the
/// closed-form laws, and flags cells where the estimate undercuts the bound
/// by more than 3 CI half-widths.
pub fn onestep_lb(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    t_step: usize,
    scales: &[f64],
    n_mc: usize,
    policy: &RngPolicy,
) -> Result<OneStepResult> {
    if t_step < 2 || t_step > schedule.horizon() {
        return Err(Error::DegenerateStep);
    }
    let variances = target.data_variances().ok_or(Error::RateSweepTarget)?;
    let d = target.dim();
    let alpha = schedule.alpha(t_step);
    let abar = schedule.alpha_bar(t_step);
    let (eta0, sigma0) = {
        let plan = plan_for_family(schedule, &CoefficientFamily::DdpmOriginal)?;
        (plan.eta(t_step), plan.sigma(t_step))
    };
    let reference = gaussian_marginal(target, schedule.alpha_bar(t_step - 1))?;

    let mut rows = Vec::new();
    for (i, &eta_scale) in scales.iter().enumerate() {
        for (j, &sigma_scale) in scales.iter().enumerate() {
            let eta = eta_scale * eta0;
            let sigma = sigma_scale * sigma0;
            let lower = one_step_tv_lower_bound(schedule, t_step, eta, sigma, d)?;
            let output_law = one_step_output_law(target, alpha, abar, eta, sigma)?;
            let log_p = |x: &[f64]| output_law.log_density(x).unwrap();
            let log_q = |x: &[f64]| reference.log_density(x).unwrap();
            let vs = variances.clone();
            let sample = move |rng: &mut rand_chacha::ChaCha8Rng, buf: &mut [f64]| {
                one_step_particle(&vs, alpha, abar, eta, sigma, rng, buf);
            };
            let tv = tv_monte_carlo_par(
                &log_p,
                &log_q,
                &sample,
                d,
                n_mc,
                policy,
                "onestep",
                (i * scales.len() + j) as u64,
            );
            rows.push(OneStepRow {
                eta_scale,
                sigma_scale,
                lower_bound: lower,
                tv_mc: tv.estimate,
                tv_ci: tv.ci_half_width,
                violation: tv.estimate < lower - 3.0 * tv.ci_half_width,
            });
        }
    }
    let mut doc = CsvDoc::new(&[
        "eta_scale",
        "sigma_scale",
        "lower_bound",
        "tv_mc",
        "tv_ci",
        "violation",
    ]);
    for r in &rows {
        doc.push_row(&[
            fmt_g17(r.eta_scale),
            fmt_g17(r.sigma_scale),
            fmt_g17(r.lower_bound),
            fmt_g17(r.tv_mc),
            fmt_g17(r.tv_ci),
            r.violation.to_string(),
        ]);
    }
    Ok(OneStepResult {
        t_step,
        alpha,
        alpha_bar: abar,
        rows,
        doc,
    })
}

/// Picks the step whose `(alpha_t, abar_t)` is closest to the requested pair.
pub fn closest_step(schedule: &NoiseSchedule, alpha_near: f64, abar_near: f64) -> usize {
    (2..=schedule.horizon())
        .min_by(|&a, &b| {
            let da =
                (schedule.alpha(a) - alpha_near).abs() + (schedule.alpha_bar(a) - abar_near).abs();
            let db =
                (schedule.alpha(b) - alpha_near).abs() + (schedule.alpha_bar(b) - abar_near).abs();
            da.partial_cmp(&db).unwrap()
        })
        .unwrap()
}

/// One row of the score-error experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreErrorRow {
    pub epsilon: f64,
    pub proxy_d: f64,
    /// `||mean(Y_1)||_2` (the target law has mean zero).
    pub mean_shift: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreErrorResult {
    pub rows: Vec<ScoreErrorRow>,
    /// Log-log slope of mean shift against epsilon over the positive rows.
    pub slope: Option<f64>,
    pub doc: CsvDoc,
}

/// Degradation under constant-shift score error: analytic propagation with a
/// per-step shift of size `epsilon`, reporting the covariance proxy and the
/// mean displacement of the final law.
pub fn score_error_sweep(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    family: &CoefficientFamily,
    epsilons: &[f64],
    direction: &[f64],
) -> Result<ScoreErrorResult> {
    if !target.is_gaussian_family() {
        return Err(Error::RateSweepTarget);
    }
    let plan = plan_for_family(schedule, family)?;
    let reference = gaussian_marginal(target, schedule.alpha_bar(1))?;
    let mut rows = Vec::new();
    for &eps in epsilons {
        let perturbation = (eps != 0.0)
            .then(|| PerturbationSpec::constant_shift(direction.to_vec(), eps, schedule.horizon()));
        let oracle = ScoreOracle {
            target: target.clone(),
            schedule: schedule.clone(),
            perturbation,
        };
        let run =
            run_reverse_analytic(schedule, &plan, &oracle, init_analytic(target.dim()), false)?;
        let proxy = gaussian_frob_proxy(&reference, &run.final_law)?;
        let mean_shift = run.final_law.mean.iter().map(|m| m * m).sum::<f64>().sqrt();
        rows.push(ScoreErrorRow {
            epsilon: eps,
            proxy_d: proxy.d,
            mean_shift,
        });
    }
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.epsilon > 0.0)
        .map(|r| (r.epsilon, r.mean_shift))
        .collect();
    let slope = ols_slope_loglog(&fit, 1e-300);
    let mut doc = CsvDoc::new(&["epsilon", "proxy_D", "mean_shift"]);
    for r in &rows {
        doc.push_row(&[
            fmt_g17(r.epsilon),
            fmt_g17(r.proxy_d),
            fmt_g17(r.mean_shift),
        ]);
    }
    if let Some(s) = slope {
        doc.push_comment(&format!("mean_shift_slope value={}", fmt_g17(s)));
    }
    Ok(ScoreErrorResult { rows, slope, doc })
}

/// One row of the coefficient audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditRow {
    pub horizon: usize,
    pub family: String,
    pub t: usize,
    pub eta: f64,
    pub sigma: f64,
    pub residual: f64,
    pub constraint23: bool,
}

#[derive(Debug, Clone)]
pub struct AuditResult {
    pub rows: Vec<AuditRow>,
    pub doc: CsvDoc,
}

/// Relation residuals for every family across a horizon grid.
pub fn coeff_audit(
    families: &[CoefficientFamily],
    t_grid: &[usize],
    c0: f64,
    c1: f64,
    c_big: f64,
) -> Result<AuditResult> {
    let mut rows = Vec::new();
    for &horizon in t_grid {
        let schedule = NoiseSchedule::build(horizon, c0, c1)?;
        for family in families {
            let plan = plan_for_family(&schedule, family)?;
            let constraint = step_size_cap_check(&plan, &schedule, c_big);
            for t in 1..=horizon {
                rows.push(AuditRow {
                    horizon,
                    family: family.tag(),
                    t,
                    eta: plan.eta(t),
                    sigma: plan.sigma(t),
                    residual: relation_residual(&plan, &schedule, t),
                    constraint23: !constraint[t - 1].flagged,
                });
            }
        }
    }
    let mut doc = CsvDoc::new(&[
        "T",
        "family",
        "t",
        "eta",
        "sigma",
        "residual",
        "constraint23",
    ]);
    for r in &rows {
        doc.push_row(&[
            r.horizon.to_string(),
            r.family.clone(),
            r.t.to_string(),
            fmt_g17(r.eta),
            fmt_g17(r.sigma),
            fmt_g17(r.residual),
            r.constraint23.to_string(),
        ]);
    }
    Ok(AuditResult { rows, doc })
}

#[derive(Debug, Clone)]
pub struct TraceResult {
    pub points: Vec<TracePoint>,
    pub doc: CsvDoc,
}

/// Posterior-trace curve `t -> E[tr Cov_{0|t}(X_t)]` by Monte Carlo.
pub fn posterior_trace_exp(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    n: usize,
    policy: &RngPolicy,
) -> TraceResult {
    let points = posterior_trace_curve(target, schedule, n, policy);
    let mut doc = CsvDoc::new(&["t", "trace_estimate", "std_error"]);
    for p in &points {
        doc.push_row(&[p.t.to_string(), fmt_g17(p.estimate), fmt_g17(p.std_error)]);
    }
    TraceResult { points, doc }
}
