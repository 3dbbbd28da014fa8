//! Probabilistic core: diagonal Gaussian posteriors, the uniform
//! mixture-of-posteriors prior, and the two training objectives (sum of
//! per-view ELBOs and the mixture-prior objective), together with the
//! gradients the trainers need.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_contract, Result};

/// Lower bound applied to every standard deviation after exponentiation.
pub const STD_FLOOR: f64 = 1e-6;

/// ½·ln(2π)
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Diagonal Gaussian q(z|x) for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl GaussianPosterior {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        ensure_contract!(
            mean.len() == std.len(),
            "mean has length {} but std has length {}",
            mean.len(),
            std.len()
        );
        ensure_contract!(
            std.iter().all(|s| *s > 0.0 && s.is_finite()),
            "standard deviations must be finite and strictly positive"
        );
        Ok(Self { mean, std })
    }

    /// Builds a posterior from a network's raw outputs: `std = max(exp(raw), STD_FLOOR)`.
    pub fn from_raw(mean: Vec<f64>, raw_std: &[f64]) -> Result<Self> {
        let std = raw_std.iter().map(|r| std_from_raw(*r)).collect();
        Self::new(mean, std)
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

pub fn std_from_raw(raw: f64) -> f64 {
    raw.exp().max(STD_FLOOR)
}

/// d std / d raw for [`std_from_raw`]; zero where the floor is active.
pub fn std_from_raw_derivative(raw: f64) -> f64 {
    let s = raw.exp();
    if s > STD_FLOOR {
        s
    } else {
        0.0
    }
}

pub fn gaussian_log_prob(x: &[f64], post: &GaussianPosterior) -> Result<f64> {
    ensure_contract!(
        x.len() == post.dim(),
        "point has dimension {} but posterior has dimension {}",
        x.len(),
        post.dim()
    );
    Ok(log_density_unchecked(x, post))
}

fn log_density_unchecked(x: &[f64], post: &GaussianPosterior) -> f64 {
    x.iter()
        .zip(&post.mean)
        .zip(&post.std)
        .map(|((xi, mi), si)| {
            let u = (xi - mi) / si;
            -HALF_LN_2PI - si.ln() - 0.5 * u * u
        })
        .sum()
}

fn standard_normal_log_density(z: &[f64]) -> f64 {
    z.iter().map(|zi| -HALF_LN_2PI - 0.5 * zi * zi).sum()
}

/// `mean + std ⊙ noise`
pub fn reparameterize(post: &GaussianPosterior, noise: &[f64]) -> Result<Vec<f64>> {
    ensure_contract!(
        noise.len() == post.dim(),
        "noise has dimension {} but posterior has dimension {}",
        noise.len(),
        post.dim()
    );
    Ok(post
        .mean
        .iter()
        .zip(&post.std)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Closed-form KL(q || N(0, I)) = ½ Σ (μ² + σ² − 1 − 2 ln σ).
pub fn kl_to_standard_normal(post: &GaussianPosterior) -> f64 {
    0.5 * post
        .mean
        .iter()
        .zip(&post.std)
        .map(|(m, s)| m * m + s * s - 1.0 - 2.0 * s.ln())
        .sum::<f64>()
}

/// Uniform mixture `h(z) = (1/M) Σ_k q_k(z)` over per-view posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior {
    components: Vec<GaussianPosterior>,
}

impl MixturePrior {
    pub fn new(components: Vec<GaussianPosterior>) -> Result<Self> {
        ensure_contract!(!components.is_empty(), "mixture prior needs at least one component");
        let d = components[0].dim();
        ensure_contract!(
            components.iter().all(|c| c.dim() == d),
            "mixture components must share one latent dimension"
        );
        Ok(Self { components })
    }

    pub fn components(&self) -> &[GaussianPosterior] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }
}

/// Stable log-sum-exp; returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mixture_log_prob(z: &[f64], prior: &MixturePrior) -> Result<f64> {
    ensure_contract!(
        z.len() == prior.dim(),
        "point has dimension {} but mixture has dimension {}",
        z.len(),
        prior.dim()
    );
    let mut logs: Vec<f64> = prior
        .components
        .iter()
        .map(|c| log_density_unchecked(z, c))
        .collect();
    // Fixed summation order makes the result independent of component order.
    logs.sort_by(f64::total_cmp);
    Ok(log_sum_exp(&logs) - (prior.len() as f64).ln())
}

/// Decomposition of one objective evaluation; `total == recon_loglik + regularizer`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon_loglik: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl ElboTerms {
    pub fn new(recon_loglik: f64, regularizer: f64) -> Self {
        Self {
            recon_loglik,
            regularizer,
            total: recon_loglik + regularizer,
        }
    }
}

fn check_aligned(recons: &[f64], posts: &[GaussianPosterior], samples: Option<&[Vec<f64>]>) -> Result<()> {
    ensure_contract!(
        recons.len() == posts.len(),
        "{} reconstruction terms for {} posteriors",
        recons.len(),
        posts.len()
    );
    ensure_contract!(!posts.is_empty(), "objective needs at least one view");
    if let Some(samples) = samples {
        ensure_contract!(
            samples.len() == posts.len(),
            "{} samples for {} posteriors",
            samples.len(),
            posts.len()
        );
        for (s, p) in samples.iter().zip(posts) {
            ensure_contract!(
                s.len() == p.dim(),
                "sample has dimension {} but posterior has dimension {}",
                s.len(),
                p.dim()
            );
        }
    }
    Ok(())
}

/// Sum of per-view ELBOs with the closed-form KL to a standard normal prior.
pub fn elbo_independent(recon_logliks: &[f64], posteriors: &[GaussianPosterior]) -> Result<ElboTerms> {
    check_aligned(recon_logliks, posteriors, None)?;
    let recon = recon_logliks.iter().sum();
    let reg = -posteriors.iter().map(kl_to_standard_normal).sum::<f64>();
    Ok(ElboTerms::new(recon, reg))
}

/// Sum of per-view ELBOs with the single-sample estimate `log p(z) − log q(z)`
/// of the negative KL term, evaluated at the supplied samples.
pub fn elbo_independent_mc(
    recon_logliks: &[f64],
    posteriors: &[GaussianPosterior],
    samples: &[Vec<f64>],
) -> Result<ElboTerms> {
    check_aligned(recon_logliks, posteriors, Some(samples))?;
    let recon = recon_logliks.iter().sum();
    let reg = samples
        .iter()
        .zip(posteriors)
        .map(|(z, q)| standard_normal_log_density(z) - log_density_unchecked(z, q))
        .sum();
    Ok(ElboTerms::new(recon, reg))
}

/// Log-density of the data-dependent prior for one view's sample.
///
/// With two or more views this is the uniform mixture of all posteriors. A
/// single view has nothing to borrow from, so the prior is the standard normal.
pub fn view_prior_log_prob(z: &[f64], posteriors: &[GaussianPosterior]) -> Result<f64> {
    ensure_contract!(!posteriors.is_empty(), "prior needs at least one posterior");
    if posteriors.len() == 1 {
        ensure_contract!(
            z.len() == posteriors[0].dim(),
            "point has dimension {} but posterior has dimension {}",
            z.len(),
            posteriors[0].dim()
        );
        return Ok(standard_normal_log_density(z));
    }
    mixture_log_prob(z, &MixturePrior::new(posteriors.to_vec())?)
}

/// Mixture-prior objective: Σ_m recon_m + Σ_m [log h(z_m|X) − log q_m(z_m)],
/// one sample per view shared between reconstruction and regularizer.
pub fn mmvm_objective(
    recon_logliks: &[f64],
    posteriors: &[GaussianPosterior],
    samples: &[Vec<f64>],
) -> Result<ElboTerms> {
    check_aligned(recon_logliks, posteriors, Some(samples))?;
    let recon = recon_logliks.iter().sum();
    let mut reg = 0.0;
    for (z, q) in samples.iter().zip(posteriors) {
        reg += view_prior_log_prob(z, posteriors)? - log_density_unchecked(z, q);
    }
    Ok(ElboTerms::new(recon, reg))
}

/// Which regularizer an objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regularizer {
    /// −KL(q || N(0, I)) in closed form.
    AnalyticKl,
    /// Single-sample estimate of −KL(q || N(0, I)).
    MonteCarloKl,
    /// Mixture-of-posteriors prior across views.
    MixturePrior,
}

/// Partial derivatives of the regularizer with respect to one view's
/// posterior parameters and its sample (all treated as independent inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGrad {
    pub d_mean: Vec<f64>,
    pub d_std: Vec<f64>,
    pub d_sample: Vec<f64>,
}

impl PosteriorGrad {
    fn zeros(d: usize) -> Self {
        Self {
            d_mean: vec![0.0; d],
            d_std: vec![0.0; d],
            d_sample: vec![0.0; d],
        }
    }
}

/// Regularizer value (summed over views) and its partial derivatives.
///
/// Samples are required for the Monte-Carlo and mixture variants and ignored
/// by the analytic KL.
pub fn regularizer_value_and_grad(
    kind: Regularizer,
    posteriors: &[GaussianPosterior],
    samples: &[Vec<f64>],
) -> Result<(f64, Vec<PosteriorGrad>)> {
    let m = posteriors.len();
    ensure_contract!(m > 0, "regularizer needs at least one view");
    let d = posteriors[0].dim();
    ensure_contract!(
        posteriors.iter().all(|p| p.dim() == d),
        "all views must share one latent dimension"
    );
    if kind != Regularizer::AnalyticKl {
        let zeros = vec![0.0; m];
        check_aligned(&zeros, posteriors, Some(samples))?;
    }
    let mut grads: Vec<PosteriorGrad> = (0..m).map(|_| PosteriorGrad::zeros(d)).collect();
    let mut value = 0.0;

    match kind {
        Regularizer::AnalyticKl => {
            for (q, g) in posteriors.iter().zip(&mut grads) {
                value -= kl_to_standard_normal(q);
                for i in 0..d {
                    g.d_mean[i] = -q.mean[i];
                    g.d_std[i] = 1.0 / q.std[i] - q.std[i];
                }
            }
        }
        Regularizer::MixturePrior if m >= 2 => {
            let mut comp_logs = vec![0.0; m];
            for (j, z) in samples.iter().enumerate() {
                for (k, q) in posteriors.iter().enumerate() {
                    comp_logs[k] = log_density_unchecked(z, q);
                }
                let lse = log_sum_exp(&comp_logs);
                value += lse - (m as f64).ln() - comp_logs[j];
                for k in 0..m {
                    let resp = (comp_logs[k] - lse).exp();
                    let q = &posteriors[k];
                    for i in 0..d {
                        let s = q.std[i];
                        let diff = z[i] - q.mean[i];
                        let score = diff / (s * s);
                        // log h(z_j): responsibility-weighted component scores.
                        grads[j].d_sample[i] -= resp * score;
                        grads[k].d_mean[i] += resp * score;
                        grads[k].d_std[i] += resp * (diff * diff / (s * s * s) - 1.0 / s);
                    }
                }
                // − log q_j(z_j)
                let q = &posteriors[j];
                for i in 0..d {
                    let s = q.std[i];
                    let diff = z[i] - q.mean[i];
                    grads[j].d_sample[i] += diff / (s * s);
                    grads[j].d_mean[i] -= diff / (s * s);
                    grads[j].d_std[i] += 1.0 / s - diff * diff / (s * s * s);
                }
            }
        }
        Regularizer::MonteCarloKl | Regularizer::MixturePrior => {
            for ((z, q), g) in samples.iter().zip(posteriors).zip(&mut grads) {
                value += standard_normal_log_density(z) - log_density_unchecked(z, q);
                for i in 0..d {
                    let s = q.std[i];
                    let diff = z[i] - q.mean[i];
                    g.d_sample[i] = -z[i] + diff / (s * s);
                    g.d_mean[i] = -diff / (s * s);
                    g.d_std[i] = 1.0 / s - diff * diff / (s * s * s);
                }
            }
        }
    }
    Ok((value, grads))
}
