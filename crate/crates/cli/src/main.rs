//! `difflab` command-line driver.
//!
//! Subcommands: `schedule | coeffs | sample | sweep | lowerbound |
//! score-error | trace | audit`. A TOML config (`--config`) supplies targets
//! and experiment parameters; flags override config values. Exit codes:
//! 0 success, 2 configuration error, 3 numeric/admissibility error.

use clap::{Args, Parser, Subcommand};
use difflab_core::coeffs::{plan_for_family, CoefficientFamily};
use difflab_core::config::{parse_family, RunConfig, XiConfig};
use difflab_core::csvout::{stable_hash, write_atomic, CsvDoc};
use difflab_core::error::{Error, Result};
use difflab_core::experiments::{
    closest_step, coeff_audit, coeffs_dump, onestep_lb, posterior_trace_exp, rate_sweep,
    sample_analytic, sample_ensemble, schedule_dump, score_error_sweep, InitLaw,
};
use difflab_core::rng::RngPolicy;
use difflab_core::schedule::{NoiseSchedule, DEFAULT_C0, DEFAULT_C1};
use difflab_core::target::TargetSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "difflab",
    version,
    about = "Reverse-diffusion sampler laboratory"
)]
struct Cli {
    /// TOML run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides [mc].master_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path; overrides `out` from the config. Stdout if absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    /// Horizon T.
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    c1: Option<f64>,
}

#[derive(Args, Clone)]
struct TargetArgs {
    /// `low_rank_gaussian` | `diag_gaussian` | `atom_mixture`.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated variances for diag_gaussian.
    #[arg(long, value_delimiter = ',')]
    variances: Option<Vec<f64>>,
    /// CSV of atom coordinates, one atom per line.
    #[arg(long)]
    atoms_file: Option<PathBuf>,
    /// Comma-separated mixture weights.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct FamilyArgs {
    /// Coefficient family tag.
    #[arg(long)]
    family: Option<String>,
    /// Noise weight for generalized_xi.
    #[arg(long)]
    xi: Option<f64>,
    /// Per-step varsigma values, one per line.
    #[arg(long)]
    varsigma_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the noise schedule: t,beta,alpha,alpha_bar.
    Schedule {
        #[command(flatten)]
        schedule: ScheduleArgs,
    },
    /// Emit per-step coefficients: t,eta,sigma,residual,constraint23.
    Coeffs {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        family: FamilyArgs,
        /// Constant in the step-size cap check.
        #[arg(long, default_value_t = 1.0)]
        c_big: f64,
    },
    /// Run the reverse process; emit the trajectory t,coord,variance.
    Sample {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        family: FamilyArgs,
        /// Particle count for ensemble runs.
        #[arg(long)]
        n: Option<usize>,
        /// Propagate the exact diagonal-Gaussian law instead of particles.
        #[arg(long)]
        analytic: bool,
        /// `standard_normal` | `forward_marginal` (analytic runs only).
        #[arg(long)]
        init: Option<String>,
        /// Trajectory output path (defaults to --out / stdout).
        #[arg(long)]
        traj_out: Option<PathBuf>,
        /// Also dump the final particles to this path.
        #[arg(long)]
        dump_particles: Option<PathBuf>,
    },
    /// Rate sweep across a horizon grid; emits proxy and TV columns + slope.
    Sweep {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        c0: Option<f64>,
        #[arg(long)]
        c1: Option<f64>,
        /// Comma-separated horizons.
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<usize>>,
        /// Comma-separated family tags.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        #[arg(long)]
        init: Option<String>,
        /// Monte-Carlo samples per TV column entry.
        #[arg(long)]
        n: Option<usize>,
    },
    /// One-step lower-bound grid at a chosen step.
    Lowerbound {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        family: FamilyArgs,
        /// Step index t >= 2 (default: the step nearest alpha=0.9, abar=0.5).
        #[arg(long)]
        t: Option<usize>,
        /// Absolute eta overriding the family pair.
        #[arg(long)]
        eta: Option<f64>,
        /// Absolute sigma overriding the family pair.
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated scale grid applied to the base pair.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Score-error degradation sweep (constant-shift perturbations).
    ScoreError {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[command(flatten)]
        family: FamilyArgs,
        /// Comma-separated epsilon values.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Posterior-trace curve t vs MC E[tr Cov_{0|t}].
    Trace {
        #[command(flatten)]
        schedule: ScheduleArgs,
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Relation residuals for all families across a horizon grid.
    Audit {
        #[arg(long)]
        c0: Option<f64>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        t_grid: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        /// Comma-separated xi values audited as generalized_xi families.
        #[arg(long, value_delimiter = ',')]
        xi_values: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        c_big: f64,
    },
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // a failed global-pool build (e.g. set twice in tests) is not fatal
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_config() { 2 } else { 3 });
    }
}

/// Loaded config (possibly empty) plus the hash that goes into CSV metadata.
struct Context {
    config: RunConfig,
    config_hash: u64,
    seed: u64,
    out: Option<PathBuf>,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let config_hash = if cli.config.is_some() {
            config.config_hash
        } else {
            // hash the flags that define the run; thread count and output
            // location must not change the emitted bytes
            let mut argv: Vec<String> = Vec::new();
            let mut skip_value = false;
            for arg in std::env::args() {
                if skip_value {
                    skip_value = false;
                    continue;
                }
                if arg == "--threads" || arg == "--out" {
                    skip_value = true;
                    continue;
                }
                if arg.starts_with("--threads=") || arg.starts_with("--out=") {
                    continue;
                }
                argv.push(arg);
            }
            stable_hash(argv.join("\u{0}").as_bytes())
        };
        let seed = cli
            .seed
            .or(config.mc.as_ref().map(|m| m.master_seed))
            .unwrap_or(0);
        let out = cli
            .out
            .clone()
            .or_else(|| config.out.as_ref().map(PathBuf::from));
        Ok(Context {
            config,
            config_hash,
            seed,
            out,
        })
    }

    fn policy(&self) -> RngPolicy {
        RngPolicy::new(self.seed)
    }

    fn schedule(&self, args: &ScheduleArgs) -> Result<NoiseSchedule> {
        let from_cfg = self.config.schedule.as_ref();
        let horizon = args
            .horizon
            .or(from_cfg.map(|s| s.t))
            .ok_or_else(|| Error::config("schedule.t", "missing horizon (--T)"))?;
        let c0 = args
            .c0
            .or(from_cfg.and_then(|s| s.c0))
            .unwrap_or(DEFAULT_C0);
        let c1 = args
            .c1
            .or(from_cfg.and_then(|s| s.c1))
            .unwrap_or(DEFAULT_C1);
        NoiseSchedule::build(horizon, c0, c1)
    }

    fn target(&self, args: &TargetArgs) -> Result<TargetSpec> {
        if args.target.is_none() && self.config.target.is_some() {
            return self.config.build_target();
        }
        let kind = args.target.as_deref().unwrap_or("low_rank_gaussian");
        match kind {
            "low_rank_gaussian" => {
                let d = args
                    .d
                    .ok_or_else(|| Error::config("target.d", "missing --d"))?;
                let k = args
                    .k
                    .ok_or_else(|| Error::config("target.k", "missing --k"))?;
                TargetSpec::low_rank_gaussian(d, k)
            }
            "diag_gaussian" => {
                let v = args
                    .variances
                    .clone()
                    .ok_or_else(|| Error::config("target.variances", "missing --variances"))?;
                TargetSpec::diag_gaussian(v)
            }
            "atom_mixture" => {
                let file = args
                    .atoms_file
                    .as_ref()
                    .ok_or_else(|| Error::config("target.atoms_file", "missing --atoms-file"))?;
                let text = std::fs::read_to_string(file).map_err(|e| {
                    Error::config("target.atoms_file", format!("{}: {e}", file.display()))
                })?;
                let mut atoms = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    let row: std::result::Result<Vec<f64>, _> =
                        line.split(',').map(|f| f.trim().parse::<f64>()).collect();
                    atoms.push(row.map_err(|e| Error::config("target.atoms_file", e.to_string()))?);
                }
                let weights = args
                    .weights
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / atoms.len() as f64; atoms.len()]);
                TargetSpec::atom_mixture(atoms, weights, args.k.unwrap_or(0))
            }
            other => Err(Error::config(
                "target.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }

    fn family(&self, args: &FamilyArgs, horizon: usize) -> Result<CoefficientFamily> {
        if args.family.is_none() && self.config.sampler.is_some() {
            return self.config.build_family(horizon);
        }
        let name = args.family.as_deref().unwrap_or("ddpm_original");
        let xi = args.xi.map(XiConfig::Constant);
        let varsigma = match &args.varsigma_file {
            Some(file) => {
                let text = std::fs::read_to_string(file).map_err(|e| {
                    Error::config("sampler.varsigma_file", format!("{}: {e}", file.display()))
                })?;
                let mut vs = Vec::new();
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    vs.push(
                        line.parse::<f64>()
                            .map_err(|e| Error::config("sampler.varsigma_file", e.to_string()))?,
                    );
                }
                Some(vs)
            }
            None => None,
        };
        parse_family(name, xi.as_ref(), varsigma, None, None, horizon)
    }

    fn n_samples(&self, flag: Option<usize>, fallback: usize) -> usize {
        flag.or(self.config.mc.as_ref().map(|m| m.n_samples))
            .unwrap_or(fallback)
    }

    fn emit(&self, doc: &CsvDoc, to: Option<&PathBuf>) -> Result<()> {
        let text = doc.render(self.config_hash, self.seed);
        match to.or(self.out.as_ref()) {
            Some(path) => write_atomic(path, &text).map_err(Error::from),
            None => {
                print!("{text}");
                Ok(())
            }
        }
    }
}

fn init_law(ctx: &Context, flag: &Option<String>) -> Result<InitLaw> {
    let name = flag
        .clone()
        .or_else(|| ctx.config.sampler.as_ref().and_then(|s| s.init.clone()));
    match name {
        Some(n) => InitLaw::parse(&n),
        None => Ok(InitLaw::StandardNormal),
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Context::new(&cli)?;
    match &cli.command {
        Command::Schedule { schedule } => {
            let s = ctx.schedule(schedule)?;
            ctx.emit(&schedule_dump(&s), None)
        }
        Command::Coeffs {
            schedule,
            family,
            c_big,
        } => {
            let s = ctx.schedule(schedule)?;
            let fam = ctx.family(family, s.horizon())?;
            let plan = plan_for_family(&s, &fam)?;
            ctx.emit(&coeffs_dump(&s, &plan, *c_big), None)
        }
        Command::Sample {
            schedule,
            target,
            family,
            n,
            analytic,
            init,
            traj_out,
            dump_particles,
        } => {
            let s = ctx.schedule(schedule)?;
            let tgt = ctx.target(target)?;
            let fam = ctx.family(family, s.horizon())?;
            let plan = plan_for_family(&s, &fam)?;
            let perturbation = ctx.config.build_perturbation(&tgt, &s)?;
            let analytic = *analytic
                || ctx
                    .config
                    .sampler
                    .as_ref()
                    .and_then(|sc| sc.analytic)
                    .unwrap_or(false);
            if analytic {
                let (_, doc) =
                    sample_analytic(&tgt, &s, &plan, perturbation, init_law(&ctx, init)?)?;
                ctx.emit(&doc, traj_out.as_ref())
            } else {
                let n = n
                    .or(ctx.config.sampler.as_ref().and_then(|sc| sc.n))
                    .unwrap_or(10_000);
                let (doc, particles) = sample_ensemble(
                    &tgt,
                    &s,
                    &plan,
                    perturbation,
                    n,
                    &ctx.policy(),
                    dump_particles.is_some(),
                )?;
                if let (Some(path), Some(pdoc)) = (dump_particles, particles) {
                    ctx.emit(&pdoc, Some(path))?;
                }
                ctx.emit(&doc, traj_out.as_ref())
            }
        }
        Command::Sweep {
            target,
            c0,
            c1,
            t_grid,
            families,
            init,
            n,
        } => {
            let tgt = ctx.target(target)?;
            let grid = t_grid
                .clone()
                .or_else(|| ctx.config.sweep.as_ref().map(|s| s.t_grid.clone()))
                .unwrap_or_else(|| vec![32, 64, 128, 256, 512, 1024, 2048]);
            let family_names = families
                .clone()
                .or_else(|| ctx.config.sweep.as_ref().map(|s| s.families.clone()))
                .unwrap_or_else(|| vec!["ddim_original".into(), "ddpm_original".into()]);
            let fams: Result<Vec<CoefficientFamily>> = family_names
                .iter()
                .map(|nm| parse_family(nm, None, None, None, None, 0))
                .collect();
            let init = match init
                .clone()
                .or_else(|| ctx.config.sweep.as_ref().and_then(|s| s.init.clone()))
            {
                Some(nm) => InitLaw::parse(&nm)?,
                None => InitLaw::StandardNormal,
            };
            let sc = ctx.config.schedule.as_ref();
            let result = rate_sweep(
                &tgt,
                &fams?,
                &grid,
                c0.or(sc.and_then(|s| s.c0)).unwrap_or(DEFAULT_C0),
                c1.or(sc.and_then(|s| s.c1)).unwrap_or(DEFAULT_C1),
                init,
                ctx.n_samples(*n, 2_000),
                &ctx.policy(),
            )?;
            ctx.emit(&result.doc, None)
        }
        Command::Lowerbound {
            schedule,
            target,
            family,
            t,
            eta,
            sigma,
            grid,
            n,
        } => {
            let s = ctx.schedule(schedule)?;
            let tgt = ctx.target(target)?;
            let t_step = t
                .or(ctx.config.lowerbound.as_ref().map(|l| l.t_step))
                .unwrap_or_else(|| closest_step(&s, 0.9, 0.5));
            let scales = grid
                .clone()
                .or_else(|| ctx.config.lowerbound.as_ref().map(|l| l.scales.clone()))
                .unwrap_or_else(|| vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0]);
            let result = match (eta, sigma) {
                (Some(e), sg) => {
                    // absolute pair mode: a single-cell grid around the given values
                    onestep_lb_absolute(
                        &tgt,
                        &s,
                        t_step,
                        *e,
                        sg.unwrap_or(0.0),
                        &scales,
                        ctx.n_samples(*n, 100_000),
                        &ctx.policy(),
                    )?
                }
                _ => {
                    let fam = ctx.family(family, s.horizon())?;
                    onestep_lb_family(
                        &tgt,
                        &s,
                        t_step,
                        &fam,
                        &scales,
                        ctx.n_samples(*n, 100_000),
                        &ctx.policy(),
                    )?
                }
            };
            ctx.emit(&result, None)
        }
        Command::ScoreError {
            schedule,
            target,
            family,
            epsilons,
        } => {
            let s = ctx.schedule(schedule)?;
            let tgt = ctx.target(target)?;
            let fam = ctx.family(family, s.horizon())?;
            let eps = epsilons
                .clone()
                .or_else(|| ctx.config.score_error.as_ref().map(|c| c.epsilons.clone()))
                .unwrap_or_else(|| vec![0.0, 1e-3, 1e-2, 1e-1]);
            let direction = ctx
                .config
                .score_error
                .as_ref()
                .and_then(|c| c.direction.clone())
                .unwrap_or_else(|| {
                    let mut e1 = vec![0.0; tgt.dim()];
                    e1[0] = 1.0;
                    e1
                });
            let result = score_error_sweep(&tgt, &s, &fam, &eps, &direction)?;
            ctx.emit(&result.doc, None)
        }
        Command::Trace {
            schedule,
            target,
            n,
        } => {
            let s = ctx.schedule(schedule)?;
            let tgt = ctx.target(target)?;
            let result = posterior_trace_exp(&tgt, &s, ctx.n_samples(*n, 100_000), &ctx.policy());
            ctx.emit(&result.doc, None)
        }
        Command::Audit {
            c0,
            c1,
            t_grid,
            families,
            xi_values,
            c_big,
        } => {
            let audit_cfg = ctx.config.audit.as_ref();
            let grid = t_grid
                .clone()
                .or_else(|| audit_cfg.map(|a| a.t_grid.clone()))
                .unwrap_or_else(|| vec![16, 128, 1024]);
            let names = families
                .clone()
                .or_else(|| audit_cfg.map(|a| a.families.clone()))
                .unwrap_or_else(|| {
                    vec![
                        "ddim_original".into(),
                        "ddim_half_beta".into(),
                        "ddim_song_score".into(),
                        "ddpm_original".into(),
                        "ddpm_benton".into(),
                        "ddpm_li".into(),
                    ]
                });
            let mut fams: Vec<CoefficientFamily> = names
                .iter()
                .map(|nm| parse_family(nm, None, None, None, None, 0))
                .collect::<Result<_>>()?;
            let xis = xi_values
                .clone()
                .or_else(|| audit_cfg.and_then(|a| a.xi_values.clone()))
                .unwrap_or_else(|| vec![0.0, 0.25, 0.5, 1.0, 2.0]);
            fams.extend(xis.into_iter().map(CoefficientFamily::GeneralizedXi));
            let c_big = audit_cfg.and_then(|a| a.c_big).unwrap_or(*c_big);
            let sc = ctx.config.schedule.as_ref();
            let result = coeff_audit(
                &fams,
                &grid,
                c0.or(sc.and_then(|s| s.c0)).unwrap_or(DEFAULT_C0),
                c1.or(sc.and_then(|s| s.c1)).unwrap_or(DEFAULT_C1),
                c_big,
            )?;
            ctx.emit(&result.doc, None)
        }
    }
}

/// Lower-bound grid around the chosen family's pair at the step.
fn onestep_lb_family(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    t_step: usize,
    family: &CoefficientFamily,
    scales: &[f64],
    n: usize,
    policy: &RngPolicy,
) -> Result<CsvDoc> {
    // the grid is defined relative to the DdpmOriginal pair; other families
    // enter through their own (eta, sigma) at the step as absolute overrides
    match family {
        CoefficientFamily::DdpmOriginal => {
            Ok(onestep_lb(target, schedule, t_step, scales, n, policy)?.doc)
        }
        other => {
            let plan = plan_for_family(schedule, other)?;
            onestep_lb_absolute(
                target,
                schedule,
                t_step,
                plan.eta(t_step),
                plan.sigma(t_step),
                scales,
                n,
                policy,
            )
        }
    }
}

/// Lower-bound grid scaling an absolute `(eta, sigma)` pair.
#[allow(clippy::too_many_arguments)]
fn onestep_lb_absolute(
    target: &TargetSpec,
    schedule: &NoiseSchedule,
    t_step: usize,
    eta: f64,
    sigma: f64,
    scales: &[f64],
    n: usize,
    policy: &RngPolicy,
) -> Result<CsvDoc> {
    use difflab_core::csvout::fmt_g17;
    use difflab_core::metrics::{one_step_tv_lower_bound, tv_monte_carlo_par};
    use difflab_core::sampler::{one_step_output_law, one_step_particle};

    let variances = target
        .data_variances()
        .ok_or(difflab_core::error::Error::RateSweepTarget)?;
    let d = target.dim();
    let alpha = schedule.alpha(t_step);
    let abar = schedule.alpha_bar(t_step);
    let reference = match target.forward_marginal(schedule.alpha_bar(t_step - 1))? {
        difflab_core::target::MarginalLaw::Gaussian(law) => law,
        _ => return Err(difflab_core::error::Error::RateSweepTarget),
    };
    let mut doc = CsvDoc::new(&[
        "eta_scale",
        "sigma_scale",
        "lower_bound",
        "tv_mc",
        "tv_ci",
        "violation",
    ]);
    for (i, &se) in scales.iter().enumerate() {
        for (j, &ss) in scales.iter().enumerate() {
            let e = se * eta;
            let g = ss * sigma;
            let lower = one_step_tv_lower_bound(schedule, t_step, e, g, d)?;
            let law = one_step_output_law(target, alpha, abar, e, g)?;
            let log_p = |x: &[f64]| law.log_density(x).unwrap();
            let log_q = |x: &[f64]| reference.log_density(x).unwrap();
            let vs = variances.clone();
            let sample = move |rng: &mut difflab_core::rng::ChaCha8Rng, buf: &mut [f64]| {
                one_step_particle(&vs, alpha, abar, e, g, rng, buf);
            };
            let tv = tv_monte_carlo_par(
                &log_p,
                &log_q,
                &sample,
                d,
                n,
                policy,
                "onestep",
                (i * scales.len() + j) as u64,
            );
            let violation = tv.estimate < lower - 3.0 * tv.ci_half_width;
            doc.push_row(&[
                fmt_g17(se),
                fmt_g17(ss),
                fmt_g17(lower),
                fmt_g17(tv.estimate),
                fmt_g17(tv.ci_half_width),
                violation.to_string(),
            ]);
        }
    }
    Ok(doc)
}
