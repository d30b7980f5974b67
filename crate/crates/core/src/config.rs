//! Run configuration: a strict TOML schema.
//!
//! Unknown keys are hard errors (a silently ignored typo would corrupt an
//! experiment), every referenced file must exist, and the raw config bytes
//! are hashed into each emitted CSV so outputs can be traced back to their
//! exact configuration.

use crate::coeffs::CoefficientFamily;
use crate::csvout::stable_hash;
use crate::error::{Error, Result};
use crate::rng::RngPolicy;
use crate::schedule::{NoiseSchedule, DEFAULT_C0, DEFAULT_C1};
use crate::score::PerturbationSpec;
use crate::target::TargetSpec;
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Free-form experiment name, recorded only.
    pub experiment: Option<String>,
    /// Output CSV path.
    pub out: Option<String>,
    pub target: Option<TargetConfig>,
    pub schedule: Option<ScheduleConfig>,
    pub sampler: Option<SamplerConfig>,
    pub score: Option<ScoreConfig>,
    pub mc: Option<McConfig>,
    pub sweep: Option<SweepConfig>,
    pub lowerbound: Option<LowerBoundConfig>,
    pub score_error: Option<ScoreErrorConfig>,
    pub audit: Option<AuditConfig>,
    #[serde(skip)]
    base_dir: Option<PathBuf>,
    #[serde(skip)]
    pub config_hash: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    /// `low_rank_gaussian` | `diag_gaussian` | `atom_mixture`.
    pub kind: String,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub variances: Option<Vec<f64>>,
    /// CSV file of atom coordinates, one atom per line.
    pub atoms_file: Option<String>,
    /// Inline alternative to `atoms_file`.
    pub atoms: Option<Vec<Vec<f64>>>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t: usize,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Family tag; `generalized_xi` reads `xi`, `varsigma` reads
    /// `varsigma`/`varsigma_file`, `custom` reads the eta/sigma arrays.
    pub family: String,
    pub xi: Option<XiConfig>,
    pub varsigma: Option<Vec<f64>>,
    pub varsigma_file: Option<String>,
    pub eta: Option<Vec<f64>>,
    pub eta_file: Option<String>,
    pub sigma: Option<Vec<f64>>,
    pub sigma_file: Option<String>,
    pub analytic: Option<bool>,
    /// `standard_normal` (the sampler's real init) or `forward_marginal`
    /// (diagnostic: start at the true law of X_T).
    pub init: Option<String>,
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum XiConfig {
    Constant(f64),
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub perturbation: Option<PerturbationConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    /// `constant_shift` | `linear_field`.
    pub kind: String,
    pub magnitude: f64,
    pub direction: Option<Vec<f64>>,
    pub diag: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub t_grid: Vec<usize>,
    pub families: Vec<String>,
    pub init: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundConfig {
    /// Step index `t >= 2` at which the one-step map is analyzed.
    pub t_step: usize,
    /// Scale factors applied to the DdpmOriginal pair on both axes.
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreErrorConfig {
    pub epsilons: Vec<f64>,
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    pub t_grid: Vec<usize>,
    pub families: Vec<String>,
    pub xi_values: Option<Vec<f64>>,
    pub c_big: Option<f64>,
}

impl RunConfig {
    /// Parses `text`; `base_dir` anchors relative file references.
    pub fn from_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.base_dir = base_dir.map(|p| p.to_path_buf());
        cfg.config_hash = stable_hash(text.as_bytes());
        if let Some(mc) = &cfg.mc {
            if mc.n_samples == 0 {
                return Err(Error::config("mc.n_samples", "must be >= 1"));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_str(&text, path.parent())
    }

    fn resolve(&self, file: &str) -> PathBuf {
        match &self.base_dir {
            Some(dir) => dir.join(file),
            None => PathBuf::from(file),
        }
    }

    pub fn rng_policy(&self) -> RngPolicy {
        RngPolicy::new(self.mc.as_ref().map(|m| m.master_seed).unwrap_or(0))
    }

    pub fn n_samples(&self) -> usize {
        self.mc.as_ref().map(|m| m.n_samples).unwrap_or(10_000)
    }

    pub fn build_schedule(&self) -> Result<NoiseSchedule> {
        let sc = self
            .schedule
            .as_ref()
            .ok_or_else(|| Error::config("schedule", "missing [schedule] block"))?;
        if sc.t < 2 {
            return Err(Error::config("schedule.t", format!("T = {} < 2", sc.t)));
        }
        NoiseSchedule::build(
            sc.t,
            sc.c0.unwrap_or(DEFAULT_C0),
            sc.c1.unwrap_or(DEFAULT_C1),
        )
    }

    pub fn build_target(&self) -> Result<TargetSpec> {
        let tc = self
            .target
            .as_ref()
            .ok_or_else(|| Error::config("target", "missing [target] block"))?;
        match tc.kind.as_str() {
            "low_rank_gaussian" => {
                let d = tc
                    .d
                    .ok_or_else(|| Error::config("target.d", "required for low_rank_gaussian"))?;
                let k = tc
                    .k
                    .ok_or_else(|| Error::config("target.k", "required for low_rank_gaussian"))?;
                TargetSpec::low_rank_gaussian(d, k)
            }
            "diag_gaussian" => {
                let v = tc.variances.clone().ok_or_else(|| {
                    Error::config("target.variances", "required for diag_gaussian")
                })?;
                TargetSpec::diag_gaussian(v)
            }
            "atom_mixture" => {
                let atoms = match (&tc.atoms, &tc.atoms_file) {
                    (Some(a), _) => a.clone(),
                    (None, Some(file)) => read_matrix(&self.resolve(file), "target.atoms_file")?,
                    (None, None) => {
                        return Err(Error::config(
                            "target.atoms",
                            "atom_mixture needs `atoms` or `atoms_file`",
                        ))
                    }
                };
                let weights = tc
                    .weights
                    .clone()
                    .unwrap_or_else(|| vec![1.0 / atoms.len() as f64; atoms.len()]);
                TargetSpec::atom_mixture(atoms, weights, tc.k.unwrap_or(0))
            }
            other => Err(Error::config(
                "target.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }

    pub fn build_family(&self, horizon: usize) -> Result<CoefficientFamily> {
        let sc = self
            .sampler
            .as_ref()
            .ok_or_else(|| Error::config("sampler", "missing [sampler] block"))?;
        parse_family(
            &sc.family,
            sc.xi.as_ref(),
            self.inline_or_file(&sc.varsigma, &sc.varsigma_file, "sampler.varsigma_file")?,
            self.inline_or_file(&sc.eta, &sc.eta_file, "sampler.eta_file")?,
            self.inline_or_file(&sc.sigma, &sc.sigma_file, "sampler.sigma_file")?,
            horizon,
        )
    }

    fn inline_or_file(
        &self,
        inline: &Option<Vec<f64>>,
        file: &Option<String>,
        path: &str,
    ) -> Result<Option<Vec<f64>>> {
        match (inline, file) {
            (Some(v), _) => Ok(Some(v.clone())),
            (None, Some(f)) => read_column(&self.resolve(f), path).map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn build_perturbation(
        &self,
        target: &TargetSpec,
        schedule: &NoiseSchedule,
    ) -> Result<Option<PerturbationSpec>> {
        let Some(pc) = self.score.as_ref().and_then(|s| s.perturbation.as_ref()) else {
            return Ok(None);
        };
        let d = target.dim();
        match pc.kind.as_str() {
            "constant_shift" => {
                let direction = pc.direction.clone().unwrap_or_else(|| {
                    let mut e1 = vec![0.0; d];
                    e1[0] = 1.0;
                    e1
                });
                if direction.len() != d {
                    return Err(Error::config(
                        "score.perturbation.direction",
                        format!("length {} != d = {d}", direction.len()),
                    ));
                }
                Ok(Some(PerturbationSpec::constant_shift(
                    direction,
                    pc.magnitude,
                    schedule.horizon(),
                )))
            }
            "linear_field" => {
                let diag = pc.diag.clone().unwrap_or_else(|| vec![1.0; d]);
                if diag.len() != d {
                    return Err(Error::config(
                        "score.perturbation.diag",
                        format!("length {} != d = {d}", diag.len()),
                    ));
                }
                Ok(Some(PerturbationSpec::linear_field(
                    diag,
                    pc.magnitude,
                    target,
                    schedule,
                )))
            }
            other => Err(Error::config(
                "score.perturbation.kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

/// Parses a family tag plus its parameters.
pub fn parse_family(
    name: &str,
    xi: Option<&XiConfig>,
    varsigma: Option<Vec<f64>>,
    eta: Option<Vec<f64>>,
    sigma: Option<Vec<f64>>,
    horizon: usize,
) -> Result<CoefficientFamily> {
    match name {
        "ddim_original" => Ok(CoefficientFamily::DdimOriginal),
        "ddim_half_beta" => Ok(CoefficientFamily::DdimHalfBeta),
        "ddim_song_score" => Ok(CoefficientFamily::DdimSongScore),
        "ddpm_original" => Ok(CoefficientFamily::DdpmOriginal),
        "ddpm_benton" => Ok(CoefficientFamily::DdpmBenton),
        "ddpm_li" => Ok(CoefficientFamily::DdpmLi),
        "generalized_xi" => match xi {
            Some(XiConfig::Constant(x)) => Ok(CoefficientFamily::GeneralizedXi(*x)),
            Some(XiConfig::PerStep(xs)) => Ok(CoefficientFamily::GeneralizedXiPerStep(xs.clone())),
            None => Err(Error::config("sampler.xi", "required for generalized_xi")),
        },
        "varsigma" => {
            let vs = varsigma.ok_or_else(|| {
                Error::config("sampler.varsigma", "required for the varsigma family")
            })?;
            Ok(CoefficientFamily::Varsigma(vs))
        }
        "custom" => {
            let eta =
                eta.ok_or_else(|| Error::config("sampler.eta", "required for the custom family"))?;
            let sigma = sigma.unwrap_or_else(|| vec![0.0; horizon]);
            Ok(CoefficientFamily::Custom { eta, sigma })
        }
        other => Err(Error::config(
            "sampler.family",
            format!("unknown family `{other}`"),
        )),
    }
}

fn read_column(path: &Path, key: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(key, format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            line.parse::<f64>()
                .map_err(|e| Error::config(key, format!("line {}: {e}", lineno + 1)))?,
        );
    }
    Ok(out)
}

fn read_matrix(path: &Path, key: &str) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(key, format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        out.push(row.map_err(|e| Error::config(key, format!("line {}: {e}", lineno + 1)))?);
    }
    Ok(out)
}
