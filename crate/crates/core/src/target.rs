//! Analytically tractable target distributions.
//!
//! Each target carries intrinsic-dimension and support-radius metadata and
//! admits a closed-form forward marginal at any noise level `abar`: a
//! diagonal Gaussian for the Gaussian family, a common-covariance Gaussian
//! mixture for atom mixtures.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const LN_2PI: f64 = 1.8378770664093453;

/// Target data distribution.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetSpec {
    /// `N(0, diag(I_k, 0))` in ambient dimension `d`.
    LowRankGaussian { d: usize, k: usize },
    /// Zero-mean Gaussian with the given diagonal covariance (entries may be 0).
    DiagGaussian { variances: Vec<f64> },
    /// Finite atom set with the given weights; `k_intrinsic` is declared
    /// metadata, not computed.
    AtomMixture {
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        k_intrinsic: usize,
    },
}

impl TargetSpec {
    pub fn low_rank_gaussian(d: usize, k: usize) -> Result<Self> {
        let t = TargetSpec::LowRankGaussian { d, k };
        t.validate()?;
        Ok(t)
    }

    pub fn diag_gaussian(variances: Vec<f64>) -> Result<Self> {
        let t = TargetSpec::DiagGaussian { variances };
        t.validate()?;
        Ok(t)
    }

    pub fn atom_mixture(
        atoms: Vec<Vec<f64>>,
        weights: Vec<f64>,
        k_intrinsic: usize,
    ) -> Result<Self> {
        let t = TargetSpec::AtomMixture {
            atoms,
            weights,
            k_intrinsic,
        };
        t.validate()?;
        Ok(t)
    }

    /// Symmetric two-atom mixture at `±1` in one dimension.
    pub fn two_atoms_1d() -> Self {
        TargetSpec::AtomMixture {
            atoms: vec![vec![-1.0], vec![1.0]],
            weights: vec![0.5, 0.5],
            k_intrinsic: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetSpec::LowRankGaussian { d, k } => {
                if *d == 0 || *k == 0 || k > d {
                    return Err(Error::InvalidTarget(format!(
                        "low-rank Gaussian needs 1 <= k <= d, got k={k}, d={d}"
                    )));
                }
            }
            TargetSpec::DiagGaussian { variances } => {
                if variances.is_empty() {
                    return Err(Error::InvalidTarget("empty variance vector".into()));
                }
                if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(Error::InvalidTarget(format!("variance {v} must be >= 0")));
                }
            }
            TargetSpec::AtomMixture { atoms, weights, .. } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidTarget("empty atom list".into()));
                }
                let d = atoms[0].len();
                if d == 0 || atoms.iter().any(|a| a.len() != d) {
                    return Err(Error::InvalidTarget(
                        "atoms must share a positive dimension".into(),
                    ));
                }
                if weights.len() != atoms.len() {
                    return Err(Error::InvalidTarget(format!(
                        "{} weights for {} atoms",
                        weights.len(),
                        atoms.len()
                    )));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                    return Err(Error::InvalidTarget("weights must be >= 0".into()));
                }
                let sum: f64 = weights.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidTarget(format!("weights sum to {sum}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match self {
            TargetSpec::LowRankGaussian { d, .. } => *d,
            TargetSpec::DiagGaussian { variances } => variances.len(),
            TargetSpec::AtomMixture { atoms, .. } => atoms[0].len(),
        }
    }

    /// Intrinsic dimension: rank for Gaussians, declared value for mixtures.
    pub fn k_intrinsic(&self) -> usize {
        match self {
            TargetSpec::LowRankGaussian { k, .. } => *k,
            TargetSpec::DiagGaussian { variances } => {
                variances.iter().filter(|v| **v > 0.0).count()
            }
            TargetSpec::AtomMixture { k_intrinsic, .. } => *k_intrinsic,
        }
    }

    /// Support radius: max atom norm for mixtures, unbounded for Gaussians.
    pub fn support_radius(&self) -> f64 {
        match self {
            TargetSpec::AtomMixture { atoms, .. } => atoms
                .iter()
                .map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }

    /// Whether the target is a zero-mean diagonal Gaussian (analytic
    /// propagation and the rate sweeps require this).
    pub fn is_gaussian_family(&self) -> bool {
        matches!(
            self,
            TargetSpec::LowRankGaussian { .. } | TargetSpec::DiagGaussian { .. }
        )
    }

    /// Data covariance diagonal for the Gaussian family.
    pub fn data_variances(&self) -> Option<Vec<f64>> {
        match self {
            TargetSpec::LowRankGaussian { d, k } => {
                let mut v = vec![0.0; *d];
                v[..*k].fill(1.0);
                Some(v)
            }
            TargetSpec::DiagGaussian { variances } => Some(variances.clone()),
            TargetSpec::AtomMixture { .. } => None,
        }
    }

    /// `E[X_0_i^2]` per coordinate (all targets are zero-mean except possibly
    /// asymmetric mixtures, for which this is still the raw second moment).
    pub fn second_moment_diag(&self) -> Vec<f64> {
        match self {
            TargetSpec::AtomMixture { atoms, weights, .. } => {
                let d = self.dim();
                let mut m = vec![0.0; d];
                for (a, w) in atoms.iter().zip(weights) {
                    for (mi, &x) in m.iter_mut().zip(a) {
                        *mi += w * x * x;
                    }
                }
                m
            }
            _ => self.data_variances().unwrap(),
        }
    }

    /// Law of `sqrt(abar) X_0 + sqrt(1 - abar) Z`, for `abar` in (0, 1].
    pub fn forward_marginal(&self, abar: f64) -> Result<MarginalLaw> {
        if !(abar > 0.0 && abar <= 1.0) {
            return Err(Error::InvalidNoiseLevel(abar));
        }
        let noise = 1.0 - abar;
        match self {
            TargetSpec::LowRankGaussian { .. } | TargetSpec::DiagGaussian { .. } => {
                let cov = self
                    .data_variances()
                    .unwrap()
                    .iter()
                    .map(|v| abar * v + noise)
                    .collect();
                Ok(MarginalLaw::Gaussian(GaussianLaw {
                    mean: vec![0.0; self.dim()],
                    cov_diag: cov,
                }))
            }
            TargetSpec::AtomMixture { atoms, weights, .. } => {
                let scale = abar.sqrt();
                let means = atoms
                    .iter()
                    .map(|a| a.iter().map(|x| scale * x).collect())
                    .collect();
                Ok(MarginalLaw::GaussianMixture {
                    means,
                    weights: weights.clone(),
                    variance: noise,
                })
            }
        }
    }

    /// Log-density of the forward marginal at `x`; errors when a component of
    /// the marginal covariance degenerates (`abar = 1` on a rank-deficient
    /// direction).
    pub fn log_density(&self, abar: f64, x: &[f64]) -> Result<f64> {
        self.forward_marginal(abar)?.log_density(abar, x)
    }

    /// `n` i.i.d. draws from the data distribution.
    pub fn sample_x0(&self, rng: &mut ChaCha8Rng, n: usize) -> Ensemble {
        let d = self.dim();
        let mut out = Ensemble::zeros(n, d);
        match self {
            TargetSpec::LowRankGaussian { k, .. } => {
                for i in 0..n {
                    let row = out.row_mut(i);
                    for coord in row[..*k].iter_mut() {
                        *coord = rng.sample(StandardNormal);
                    }
                    // remaining coordinates stay exactly zero
                }
            }
            TargetSpec::DiagGaussian { variances } => {
                let sd: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
                for i in 0..n {
                    let row = out.row_mut(i);
                    for (coord, s) in row.iter_mut().zip(&sd) {
                        if *s > 0.0 {
                            let z: f64 = rng.sample(StandardNormal);
                            *coord = s * z;
                        }
                    }
                }
            }
            TargetSpec::AtomMixture { atoms, weights, .. } => {
                for i in 0..n {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut pick = atoms.len() - 1;
                    for (j, w) in weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    out.row_mut(i).copy_from_slice(&atoms[pick]);
                }
            }
        }
        out
    }

    /// `n` i.i.d. draws from the forward marginal at `abar`.
    pub fn sample_forward(&self, abar: f64, rng: &mut ChaCha8Rng, n: usize) -> Ensemble {
        let scale = abar.sqrt();
        let noise_sd = (1.0 - abar).max(0.0).sqrt();
        let mut out = self.sample_x0(rng, n);
        for i in 0..n {
            for coord in out.row_mut(i) {
                let z: f64 = rng.sample(StandardNormal);
                *coord = scale * *coord + noise_sd * z;
            }
        }
        out
    }
}

/// Zero-mean-capable diagonal Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
}

impl GaussianLaw {
    pub fn standard(d: usize) -> Self {
        GaussianLaw {
            mean: vec![0.0; d],
            cov_diag: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.cov_diag.len()
    }

    /// Log-density; requires strictly positive covariance entries.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (i, ((&v, &m), &xi)) in self.cov_diag.iter().zip(&self.mean).zip(x).enumerate() {
            if v <= 0.0 {
                return Err(Error::DensityUndefined {
                    abar: 1.0,
                    coord: i,
                });
            }
            let dx = xi - m;
            acc += -0.5 * (LN_2PI + v.ln() + dx * dx / v);
        }
        Ok(acc)
    }
}

/// Closed-form forward marginal.
#[derive(Debug, Clone, PartialEq)]
pub enum MarginalLaw {
    Gaussian(GaussianLaw),
    /// Equal-covariance mixture: component `i` is `N(means[i], variance I)`.
    GaussianMixture {
        means: Vec<Vec<f64>>,
        weights: Vec<f64>,
        variance: f64,
    },
}

impl MarginalLaw {
    pub fn log_density(&self, abar: f64, x: &[f64]) -> Result<f64> {
        match self {
            MarginalLaw::Gaussian(law) => law.log_density(x).map_err(|e| match e {
                Error::DensityUndefined { coord, .. } => Error::DensityUndefined { abar, coord },
                other => other,
            }),
            MarginalLaw::GaussianMixture {
                means,
                weights,
                variance,
            } => {
                if *variance <= 0.0 {
                    return Err(Error::DensityUndefined { abar, coord: 0 });
                }
                let d = x.len() as f64;
                let norm = -0.5 * d * (LN_2PI + variance.ln());
                let logs: Vec<f64> = means
                    .iter()
                    .zip(weights)
                    .map(|(m, w)| {
                        let sq: f64 = m.iter().zip(x).map(|(mi, xi)| (xi - mi) * (xi - mi)).sum();
                        w.ln() + norm - 0.5 * sq / variance
                    })
                    .collect();
                Ok(log_sum_exp(&logs))
            }
        }
    }
}

/// `ln sum_i exp(v_i)` without overflow.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
