//! Exact score oracles and controlled perturbations.
//!
//! The score of the forward marginal is evaluated through the posterior mean
//! of the clean signal,
//!
//! `s(x) = (sqrt(abar) mu(x) - x) / (1 - abar)`,
//!
//! and its Jacobian diagonal through the posterior covariance,
//!
//! `J_ii(x) = abar/(1-abar)^2 Cov_ii(x) - 1/(1-abar)`.
//!
//! For Gaussian targets both posterior quantities are linear/constant in `x`;
//! for atom mixtures they are softmax averages computed in log space (the
//! exponent spread exceeds 700 at small `1 - abar`, so log-sum-exp is not
//! optional).

use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::target::{log_sum_exp, TargetSpec};

/// Posterior mean `E[X_0 | X_t = x]` at noise level `abar` in [0, 1).
pub fn posterior_mean_at(target: &TargetSpec, abar: f64, x: &[f64]) -> Vec<f64> {
    match target {
        TargetSpec::LowRankGaussian { .. } | TargetSpec::DiagGaussian { .. } => {
            let scale = abar.sqrt();
            target
                .data_variances()
                .unwrap()
                .iter()
                .zip(x)
                .map(|(&v, &xi)| {
                    if v == 0.0 {
                        0.0
                    } else {
                        scale * v / (abar * v + (1.0 - abar)) * xi
                    }
                })
                .collect()
        }
        TargetSpec::AtomMixture { atoms, .. } => {
            let w = posterior_atom_weights(target, abar, x);
            let d = x.len();
            let mut mu = vec![0.0; d];
            for (a, wi) in atoms.iter().zip(&w) {
                for (m, &ai) in mu.iter_mut().zip(a) {
                    *m += wi * ai;
                }
            }
            mu
        }
    }
}

/// Diagonal of the posterior covariance `Cov[X_0 | X_t = x]`.
pub fn posterior_cov_diag_at(target: &TargetSpec, abar: f64, x: &[f64]) -> Vec<f64> {
    match target {
        TargetSpec::LowRankGaussian { .. } | TargetSpec::DiagGaussian { .. } => target
            .data_variances()
            .unwrap()
            .iter()
            .map(|&v| {
                if v == 0.0 {
                    0.0
                } else {
                    (1.0 - abar) * v / (abar * v + (1.0 - abar))
                }
            })
            .collect(),
        TargetSpec::AtomMixture { atoms, .. } => {
            let w = posterior_atom_weights(target, abar, x);
            let d = x.len();
            let mut first = vec![0.0; d];
            let mut second = vec![0.0; d];
            for (a, wi) in atoms.iter().zip(&w) {
                for ((m1, m2), &ai) in first.iter_mut().zip(second.iter_mut()).zip(a) {
                    *m1 += wi * ai;
                    *m2 += wi * ai * ai;
                }
            }
            first
                .iter()
                .zip(&second)
                .map(|(m1, m2)| m2 - m1 * m1)
                .collect()
        }
    }
}

/// Softmax posterior weights over atoms given `x` at level `abar`.
fn posterior_atom_weights(target: &TargetSpec, abar: f64, x: &[f64]) -> Vec<f64> {
    let TargetSpec::AtomMixture { atoms, weights, .. } = target else {
        unreachable!()
    };
    let noise = 1.0 - abar;
    let scale = abar.sqrt();
    let logits: Vec<f64> = atoms
        .iter()
        .zip(weights)
        .map(|(a, w)| {
            let sq: f64 = a
                .iter()
                .zip(x)
                .map(|(ai, xi)| {
                    let dx = xi - scale * ai;
                    dx * dx
                })
                .sum();
            w.ln() - 0.5 * sq / noise
        })
        .collect();
    let lse = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

/// Exact (unperturbed) score at level `abar` in (0, 1).
pub fn score_at(target: &TargetSpec, abar: f64, x: &[f64]) -> Vec<f64> {
    let mu = posterior_mean_at(target, abar, x);
    let scale = abar.sqrt();
    let noise = 1.0 - abar;
    mu.iter()
        .zip(x)
        .map(|(m, &xi)| (scale * m - xi) / noise)
        .collect()
}

/// Diagonal of the exact score Jacobian (diagonal for all supported targets
/// in their eigenbasis; atom mixtures off one axis are handled coordinatewise
/// because posterior covariance is evaluated per coordinate).
pub fn score_jacobian_diag_at(target: &TargetSpec, abar: f64, x: &[f64]) -> Vec<f64> {
    let cov = posterior_cov_diag_at(target, abar, x);
    let noise = 1.0 - abar;
    cov.iter()
        .map(|c| abar / (noise * noise) * c - 1.0 / noise)
        .collect()
}

/// Structured score perturbation fields with analytically known size.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// `s(x) += m_t * direction` (direction is a unit vector).
    ConstantShift {
        direction: Vec<f64>,
        magnitudes: Vec<f64>,
    },
    /// `s(x) += m_t * diag .* x`.
    LinearField {
        diag: Vec<f64>,
        magnitudes: Vec<f64>,
    },
}

/// Perturbation plus its declared time-averaged L2 size
/// `eps^2 = (1/T) sum_t E || s_t - s_t* ||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub kind: Perturbation,
    pub declared_epsilon: f64,
}

impl PerturbationSpec {
    /// Constant shift of size `magnitude` at every step along `direction`
    /// (normalized here); declared epsilon is exact for this field.
    pub fn constant_shift(direction: Vec<f64>, magnitude: f64, horizon: usize) -> Self {
        let norm: f64 = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit: Vec<f64> = direction.iter().map(|x| x / norm).collect();
        PerturbationSpec {
            kind: Perturbation::ConstantShift {
                direction: unit,
                magnitudes: vec![magnitude; horizon],
            },
            declared_epsilon: magnitude.abs(),
        }
    }

    /// Linear field `m * diag .* x` at every step; the declared epsilon is the
    /// exact analytic value for `target` under `schedule`.
    pub fn linear_field(
        diag: Vec<f64>,
        magnitude: f64,
        target: &TargetSpec,
        schedule: &NoiseSchedule,
    ) -> Self {
        let mut spec = PerturbationSpec {
            kind: Perturbation::LinearField {
                diag,
                magnitudes: vec![magnitude; schedule.horizon()],
            },
            declared_epsilon: 0.0,
        };
        spec.declared_epsilon = spec.analytic_epsilon(target, schedule);
        spec
    }

    /// Field value at `(t, x)`.
    pub fn field(&self, t: usize, x: &[f64]) -> Vec<f64> {
        match &self.kind {
            Perturbation::ConstantShift {
                direction,
                magnitudes,
            } => direction.iter().map(|u| magnitudes[t - 1] * u).collect(),
            Perturbation::LinearField { diag, magnitudes } => diag
                .iter()
                .zip(x)
                .map(|(d, &xi)| magnitudes[t - 1] * d * xi)
                .collect(),
        }
    }

    /// Jacobian diagonal contribution of the field at step `t`.
    pub fn jacobian_diag(&self, t: usize, d: usize) -> Vec<f64> {
        match &self.kind {
            Perturbation::ConstantShift { .. } => vec![0.0; d],
            Perturbation::LinearField { diag, magnitudes } => {
                diag.iter().map(|di| magnitudes[t - 1] * di).collect()
            }
        }
    }

    /// Per-step constant offset (zero for LinearField) and linear diagonal
    /// (zero for ConstantShift) — both fields keep the score affine.
    pub fn affine_parts(&self, t: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            Perturbation::ConstantShift {
                direction,
                magnitudes,
            } => (
                direction.iter().map(|u| magnitudes[t - 1] * u).collect(),
                vec![0.0; d],
            ),
            Perturbation::LinearField { diag, magnitudes } => (
                vec![0.0; d],
                diag.iter().map(|di| magnitudes[t - 1] * di).collect(),
            ),
        }
    }

    /// Exact `sqrt((1/T) sum_t E||field_t(X_t)||^2)` under the forward marginals.
    pub fn analytic_epsilon(&self, target: &TargetSpec, schedule: &NoiseSchedule) -> f64 {
        let horizon = schedule.horizon();
        let second_moment = target.second_moment_diag();
        let mut acc = 0.0;
        for t in 1..=horizon {
            acc += match &self.kind {
                Perturbation::ConstantShift {
                    direction,
                    magnitudes,
                } => {
                    let m = magnitudes[t - 1];
                    m * m * direction.iter().map(|u| u * u).sum::<f64>()
                }
                Perturbation::LinearField { diag, magnitudes } => {
                    let m = magnitudes[t - 1];
                    let abar = schedule.alpha_bar(t);
                    let noise = schedule.one_minus_alpha_bar(t);
                    m * m
                        * diag
                            .iter()
                            .zip(&second_moment)
                            .map(|(di, &s2)| di * di * (abar * s2 + noise))
                            .sum::<f64>()
                }
            };
        }
        (acc / horizon as f64).sqrt()
    }
}

/// Score oracle: a target, a schedule, and an optional perturbation.
#[derive(Debug, Clone)]
pub struct ScoreOracle {
    pub target: TargetSpec,
    pub schedule: NoiseSchedule,
    pub perturbation: Option<PerturbationSpec>,
}

impl ScoreOracle {
    pub fn exact(target: TargetSpec, schedule: NoiseSchedule) -> Self {
        ScoreOracle {
            target,
            schedule,
            perturbation: None,
        }
    }

    pub fn perturbed(
        target: TargetSpec,
        schedule: NoiseSchedule,
        perturbation: PerturbationSpec,
    ) -> Self {
        ScoreOracle {
            target,
            schedule,
            perturbation: Some(perturbation),
        }
    }

    pub fn dim(&self) -> usize {
        self.target.dim()
    }

    /// `mu_{0|t}(x)`.
    pub fn posterior_mean(&self, t: usize, x: &[f64]) -> Vec<f64> {
        posterior_mean_at(&self.target, self.schedule.alpha_bar(t), x)
    }

    /// Diagonal of `Cov_{0|t}(x)`.
    pub fn posterior_cov_diag(&self, t: usize, x: &[f64]) -> Vec<f64> {
        posterior_cov_diag_at(&self.target, self.schedule.alpha_bar(t), x)
    }

    /// Score estimate `s_t(x)`: the exact score plus the configured field.
    pub fn score(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let mut s = score_at(&self.target, self.schedule.alpha_bar(t), x);
        if let Some(p) = &self.perturbation {
            for (si, e) in s.iter_mut().zip(p.field(t, x)) {
                *si += e;
            }
        }
        s
    }

    /// Diagonal of `∂s_t/∂x`.
    pub fn score_jacobian_diag(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let mut j = score_jacobian_diag_at(&self.target, self.schedule.alpha_bar(t), x);
        if let Some(p) = &self.perturbation {
            for (ji, e) in j.iter_mut().zip(p.jacobian_diag(t, x.len())) {
                *ji += e;
            }
        }
        j
    }

    /// Whether the score is affine in `x` (requirement for analytic
    /// propagation): Gaussian target, any of the structured fields.
    pub fn is_affine(&self) -> bool {
        self.target.is_gaussian_family()
    }

    /// Affine decomposition `s_t(x) = J_t .* x + b_t` for Gaussian targets.
    pub fn affine_score(&self, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if !self.is_affine() {
            return Err(crate::error::Error::AnalyticUnavailable(format!(
                "score is not affine for target {:?}",
                self.target
            )));
        }
        let d = self.dim();
        let abar = self.schedule.alpha_bar(t);
        let noise = self.schedule.one_minus_alpha_bar(t);
        let cov = posterior_cov_diag_at(&self.target, abar, &vec![0.0; d]);
        let mut jac: Vec<f64> = cov
            .iter()
            .map(|c| abar / (noise * noise) * c - 1.0 / noise)
            .collect();
        let mut offset = vec![0.0; d];
        if let Some(p) = &self.perturbation {
            let (b, jdiag) = p.affine_parts(t, d);
            for ((j, o), (jp, bp)) in jac
                .iter_mut()
                .zip(offset.iter_mut())
                .zip(jdiag.into_iter().zip(b))
            {
                *j += jp;
                *o += bp;
            }
        }
        Ok((jac, offset))
    }
}

/// Monte-Carlo estimate of `(1/T) sum_t E||s_t - s_t*||^2` with `n` forward
/// samples per step; returns the square root for comparison against the
/// declared epsilon.
pub fn mc_epsilon_score(oracle: &ScoreOracle, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let Some(p) = &oracle.perturbation else {
        return 0.0;
    };
    let horizon = oracle.schedule.horizon();
    let mut acc = 0.0;
    for t in 1..=horizon {
        let abar = oracle.schedule.alpha_bar(t);
        let xs = oracle.target.sample_forward(abar, rng, n);
        let mut step = 0.0;
        for i in 0..n {
            let e = p.field(t, xs.row(i));
            step += e.iter().map(|v| v * v).sum::<f64>();
        }
        acc += step / n as f64;
    }
    (acc / horizon as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngPolicy;
    use crate::schedule::NoiseSchedule;

    #[test]
    fn mixture_posterior_mean_values() {
        let t = TargetSpec::two_atoms_1d();
        // abar = 0: posterior mean equals prior mean
        assert_eq!(posterior_mean_at(&t, 0.0, &[3.7])[0], 0.0);
        // abar = 0.5, x = 1: tanh(sqrt(0.5)/0.5)
        let mu = posterior_mean_at(&t, 0.5, &[1.0])[0];
        assert!((mu - 0.8883855615856605).abs() < 1e-12);
        let cov = posterior_cov_diag_at(&t, 0.5, &[1.0])[0];
        assert!((cov - 0.21077109396613054).abs() < 1e-12);
        // prior variance at abar = 0
        assert!((posterior_cov_diag_at(&t, 0.0, &[9.0])[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn low_rank_posterior_values() {
        let t = TargetSpec::low_rank_gaussian(2, 1).unwrap();
        let mu = posterior_mean_at(&t, 0.75, &[1.0, 1.0]);
        assert!((mu[0] - 0.8660254037844386).abs() < 1e-15);
        assert_eq!(mu[1], 0.0);
        let cov = posterior_cov_diag_at(&t, 0.75, &[1.0, 1.0]);
        assert!((cov[0] - 0.25).abs() < 1e-15);
        assert_eq!(cov[1], 0.0);
    }

    #[test]
    fn score_values() {
        let t = TargetSpec::low_rank_gaussian(2, 1).unwrap();
        let s = score_at(&t, 0.75, &[1.0, 1.0]);
        assert!((s[0] + 1.0).abs() < 1e-12);
        assert!((s[1] + 4.0).abs() < 1e-12);
        let j = score_jacobian_diag_at(&t, 0.75, &[1.0, 1.0]);
        assert!((j[0] + 1.0).abs() < 1e-12);
        assert!((j[1] + 4.0).abs() < 1e-12);

        let mix = TargetSpec::two_atoms_1d();
        let s = score_at(&mix, 0.5, &[1.0]);
        assert!((s[0] + 0.7436330901891204).abs() < 1e-12);
        // jacobian tends to -1 as abar -> 0
        let j = score_jacobian_diag_at(&mix, 1e-12, &[0.3]);
        assert!((j[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_survives_huge_exponent_spread() {
        let mix = TargetSpec::two_atoms_1d();
        let abar = 1.0 - 1e-6;
        let mu = posterior_mean_at(&mix, abar, &[600.0]);
        assert!(mu[0].is_finite());
        assert!((mu[0] - 1.0).abs() < 1e-12);
        let s = score_at(&mix, abar, &[600.0]);
        assert!(s[0].is_finite());
    }

    #[test]
    fn constant_shift_is_additive() {
        let schedule = NoiseSchedule::build(16, 2.0, 1.0).unwrap();
        let target = TargetSpec::diag_gaussian(vec![1.0, 1.0]).unwrap();
        let p = PerturbationSpec::constant_shift(vec![1.0, 0.0], 0.1, 16);
        let exact = ScoreOracle::exact(target.clone(), schedule.clone());
        let noisy = ScoreOracle::perturbed(target, schedule, p);
        let x = [0.3, -0.7];
        let s0 = exact.score(5, &x);
        let s1 = noisy.score(5, &x);
        assert!((s1[0] - s0[0] - 0.1).abs() < 1e-15);
        assert!((s1[1] - s0[1]).abs() < 1e-15);
        // jacobian untouched by a constant shift
        assert_eq!(
            exact.score_jacobian_diag(5, &x),
            noisy.score_jacobian_diag(5, &x)
        );
    }

    #[test]
    fn epsilon_audit_constant_and_linear() {
        let schedule = NoiseSchedule::build(16, 2.0, 1.0).unwrap();
        let target = TargetSpec::diag_gaussian(vec![1.0, 2.0]).unwrap();
        let policy = RngPolicy::new(5);

        let p = PerturbationSpec::constant_shift(vec![3.0, 4.0], 0.25, 16);
        assert!((p.declared_epsilon - 0.25).abs() < 1e-15);
        let oracle = ScoreOracle::perturbed(target.clone(), schedule.clone(), p.clone());
        let mut rng = policy.stream("eps", 0, 0);
        let mc = mc_epsilon_score(&oracle, 4_000, &mut rng);
        assert!((mc - 0.25).abs() < 1e-12); // constant field: x-independent

        let lf = PerturbationSpec::linear_field(vec![1.0, 0.5], 0.1, &target, &schedule);
        let oracle = ScoreOracle::perturbed(target.clone(), schedule.clone(), lf.clone());
        let mut rng = policy.stream("eps", 1, 0);
        let mc = mc_epsilon_score(&oracle, 30_000, &mut rng);
        // the declared quantity is audited on the squared scale
        let declared_sq = lf.declared_epsilon * lf.declared_epsilon;
        let rel = (mc * mc - declared_sq).abs() / declared_sq;
        assert!(
            rel < 0.02,
            "mc^2={} declared^2={declared_sq} rel={rel}",
            mc * mc
        );
    }

    #[test]
    fn posterior_cov_never_meaningfully_negative() {
        // saturated softmax regimes can cancel to tiny negatives at worst
        let mix = TargetSpec::two_atoms_1d();
        let asym = TargetSpec::atom_mixture(
            vec![vec![-2.0, 0.1], vec![0.5, -1.0], vec![1.5, 2.0]],
            vec![0.2, 0.5, 0.3],
            0,
        )
        .unwrap();
        for abar in [0.01, 0.5, 0.99, 1.0 - 1e-6] {
            for i in -40..=40 {
                let x = i as f64 / 4.0;
                for c in posterior_cov_diag_at(&mix, abar, &[x]) {
                    assert!(c >= -1e-14, "mix abar={abar} x={x}: {c}");
                }
                for c in posterior_cov_diag_at(&asym, abar, &[x, -x]) {
                    assert!(c >= -1e-14, "asym abar={abar} x={x}: {c}");
                }
            }
        }
    }
}
