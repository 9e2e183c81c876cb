//! The AIDGN loss and its regularized batch objective.
//!
//! For a latent `z` of norm `r` from source domain `d` with label `y`, the
//! true-class angle is pushed out by `Δ = γ_δ (r + β μ_d)` before a
//! temperature-`κ` softmax over cosine scores:
//!
//! ```text
//! ℓ = -log  e^{κ cos(θ_y + Δ)} / (e^{κ cos(θ_y + Δ)} + Σ_{c≠y} e^{κ cos(θ_c + γ_δ m)})
//! ```
//!
//! `μ_d` is the mean latent norm of domain `d` inside the batch. Every sample
//! also carries the norm regularizer `η (μ_d/μ* + μ*/μ_d)`, the first-order
//! expansion of `η KL(Exp(1/μ*) ‖ Exp(1/μ_d))` up to a constant.
//!
//! Gradients treat `μ_d` inside the perturbation as a constant of the step,
//! while the regularizer differentiates through `μ_d` into every latent norm
//! of the domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{dot, log_sum_exp, norm, softmax};

/// Clamp applied to cosines before `arccos`.
pub const ANGLE_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AidgnHyper {
    /// vMF concentration, used as the softmax inverse temperature.
    pub kappa: f64,
    /// Perturbation scale `γ/δ`.
    pub gamma_delta: f64,
    /// Reweighting of the in-batch domain mean inside the perturbation.
    pub beta_rw: f64,
    /// Regularizer weight.
    pub eta: f64,
    /// Ideal norm mean.
    pub mu_star: f64,
    /// Angular margin added to wrong-class angles (scaled by `gamma_delta`).
    pub margin: f64,
    /// Block the gradient through `r` inside the perturbation.
    pub stop_grad_radius: bool,
}

impl Default for AidgnHyper {
    fn default() -> Self {
        Self {
            kappa: 110.0,
            gamma_delta: 0.001,
            beta_rw: 0.275,
            eta: 0.04,
            mu_star: 410.0,
            margin: 0.0,
            stop_grad_radius: false,
        }
    }
}

impl AidgnHyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [("kappa", self.kappa), ("mu_star", self.mu_star)];
        for (k, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    format!("loss.{k}"),
                    format!("must be > 0, got {v}"),
                ));
            }
        }
        let nonneg = [
            ("gamma_delta", self.gamma_delta),
            ("beta_rw", self.beta_rw),
            ("eta", self.eta),
            ("margin", self.margin),
        ];
        for (k, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    format!("loss.{k}"),
                    format!("must be >= 0, got {v}"),
                ));
            }
        }
        Ok(())
    }

    /// The same hyperparameters with the perturbation and regularizer switched
    /// off, i.e. plain normalized-softmax cross-entropy.
    pub fn erm_reduction(&self) -> Self {
        Self {
            gamma_delta: 0.0,
            eta: 0.0,
            ..*self
        }
    }
}

/// Per-domain mean latent norm inside a batch, indexed by domain.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mu_d: Vec<f64>,
}

/// One labeled latent vector tagged with its source domain.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub domain: usize,
    pub latent: Vec<f64>,
    pub label: usize,
}

pub fn batch_norm_means<'a, I>(latents: I, num_domains: usize) -> Result<BatchStats>
where
    I: IntoIterator<Item = (usize, &'a [f64])>,
{
    let mut sums = vec![0.0; num_domains];
    let mut counts = vec![0usize; num_domains];
    for (d, z) in latents {
        if d >= num_domains {
            return Err(Error::UnknownDomainIndex(d));
        }
        let r = norm(z);
        if r == 0.0 {
            return Err(Error::ZeroVector);
        }
        sums[d] += r;
        counts[d] += 1;
    }
    let mut mu_d = Vec::with_capacity(num_domains);
    for (d, (s, &n)) in sums.iter().zip(&counts).enumerate() {
        if n == 0 {
            return Err(Error::EmptyDomain(d));
        }
        mu_d.push(s / n as f64);
    }
    Ok(BatchStats { mu_d })
}

/// `cos(clamp(arccos(clamp(c, -1+ε, 1-ε)) + Δ, 0, π))`.
///
/// `Δ = 0` returns the input untouched so that the unperturbed objective is
/// exactly the normalized softmax.
pub fn perturbed_cosine(cos_theta: f64, perturbation: f64) -> f64 {
    perturbed_cosine_with_grad(cos_theta, perturbation).value
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedCosine {
    pub value: f64,
    /// Derivative with respect to the input cosine.
    pub d_cos: f64,
    /// Derivative with respect to the perturbation.
    pub d_delta: f64,
}

pub fn perturbed_cosine_with_grad(cos_theta: f64, perturbation: f64) -> PerturbedCosine {
    let lo = -1.0 + ANGLE_CLAMP_EPS;
    let hi = 1.0 - ANGLE_CLAMP_EPS;
    let clamped = cos_theta.clamp(lo, hi);
    let inside = cos_theta > lo && cos_theta < hi;
    let theta = clamped.acos();

    if perturbation == 0.0 {
        return PerturbedCosine {
            value: cos_theta,
            d_cos: 1.0,
            d_delta: -theta.sin(),
        };
    }

    let shifted = theta + perturbation;
    if shifted >= std::f64::consts::PI {
        return PerturbedCosine {
            value: -1.0,
            d_cos: 0.0,
            d_delta: 0.0,
        };
    }
    let s = shifted.sin();
    PerturbedCosine {
        value: shifted.cos(),
        // d/dc cos(arccos c + Δ) = sin(θ + Δ) / sin θ
        d_cos: if inside { s / theta.sin() } else { 0.0 },
        d_delta: -s,
    }
}

fn check_class(true_class: usize, classes: usize) -> Result<()> {
    if true_class >= classes {
        return Err(Error::ClassIndexOutOfRange {
            index: true_class,
            classes,
        });
    }
    Ok(())
}

/// Per-sample logits `κ·c̃_c` after perturbation.
fn perturbed_logits(
    cosines: &[f64],
    true_class: usize,
    true_delta: f64,
    hyper: &AidgnHyper,
) -> (Vec<f64>, Vec<PerturbedCosine>) {
    let wrong_delta = hyper.gamma_delta * hyper.margin;
    let pcs: Vec<PerturbedCosine> = cosines
        .iter()
        .enumerate()
        .map(|(c, &cos)| {
            let delta = if c == true_class {
                true_delta
            } else {
                wrong_delta
            };
            perturbed_cosine_with_grad(cos, delta)
        })
        .collect();
    let logits = pcs.iter().map(|p| hyper.kappa * p.value).collect();
    (logits, pcs)
}

/// Loss of one sample given its cosine scores, latent norm and domain mean.
pub fn aidgn_sample_loss(
    cosines: &[f64],
    true_class: usize,
    radius: f64,
    mu_d: f64,
    hyper: &AidgnHyper,
) -> Result<f64> {
    check_class(true_class, cosines.len())?;
    let delta = hyper.gamma_delta * (radius + hyper.beta_rw * mu_d);
    let (logits, _) = perturbed_logits(cosines, true_class, delta, hyper);
    Ok(log_sum_exp(&logits) - logits[true_class])
}

/// Per-sample regularizer `η (μ_d/μ* + μ*/μ_d)`.
pub fn norm_regularizer(mu_d: f64, hyper: &AidgnHyper) -> f64 {
    hyper.eta * (mu_d / hyper.mu_star + hyper.mu_star / mu_d)
}

/// The unexpanded form `η KL(Exp(1/μ*) ‖ Exp(1/μ_d))`; not used for training.
pub fn norm_regularizer_exact_kl(mu_d: f64, hyper: &AidgnHyper) -> Result<f64> {
    Ok(hyper.eta * crate::distributions::exponential_kl(hyper.mu_star, mu_d)?)
}

/// `<w_c, z> / ‖z‖` for every head row. Rows are assumed unit length.
pub fn cosine_scores(z: &[f64], head: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    head.iter()
        .map(|w| {
            if w.len() != z.len() {
                return Err(Error::DimensionMismatch {
                    expected: w.len(),
                    got: z.len(),
                });
            }
            Ok(dot(w, z) / r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveBreakdown {
    pub total: f64,
    pub loss_sum: f64,
    pub regularizer_sum: f64,
    pub stats: BatchStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveGradients {
    /// Same shape as the head.
    pub head: Vec<Vec<f64>>,
    /// One gradient per batch sample, same order as the batch.
    pub latents: Vec<Vec<f64>>,
}

fn validate_batch(batch: &[LatentSample], head: &[Vec<f64>]) -> Result<usize> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if head.len() < 2 {
        return Err(Error::invalid("head", "need at least two classes"));
    }
    for s in batch {
        check_class(s.label, head.len())?;
    }
    Ok(batch.iter().map(|s| s.domain).max().unwrap_or(0) + 1)
}

/// Total objective `Σ_i [ℓ_i + η (μ_d/μ* + μ*/μ_d)]` over a batch.
pub fn aidgn_batch_objective(
    batch: &[LatentSample],
    head: &[Vec<f64>],
    hyper: &AidgnHyper,
) -> Result<ObjectiveBreakdown> {
    aidgn_objective_and_gradients(batch, head, hyper, false).map(|(o, _)| o)
}

/// Exact gradients of [`aidgn_batch_objective`].
pub fn aidgn_gradients(
    batch: &[LatentSample],
    head: &[Vec<f64>],
    hyper: &AidgnHyper,
) -> Result<ObjectiveGradients> {
    aidgn_objective_and_gradients(batch, head, hyper, true)
        .map(|(_, g)| g.expect("gradients requested"))
}

/// Objective and (optionally) gradients in a single pass with a fixed
/// summation order.
pub fn aidgn_objective_and_gradients(
    batch: &[LatentSample],
    head: &[Vec<f64>],
    hyper: &AidgnHyper,
    with_gradients: bool,
) -> Result<(ObjectiveBreakdown, Option<ObjectiveGradients>)> {
    objective_impl(batch, head, hyper, with_gradients, None)
}

/// The batch objective with the domain means inside the perturbation pinned
/// to `perturbation_means`; the regularizer still uses the live batch means.
/// Differentiating this by finite differences around a point where the pins
/// equal the batch means reproduces [`aidgn_gradients`].
pub fn aidgn_objective_pinned(
    batch: &[LatentSample],
    head: &[Vec<f64>],
    hyper: &AidgnHyper,
    perturbation_means: &[f64],
) -> Result<ObjectiveBreakdown> {
    objective_impl(batch, head, hyper, false, Some(perturbation_means)).map(|(o, _)| o)
}

fn objective_impl(
    batch: &[LatentSample],
    head: &[Vec<f64>],
    hyper: &AidgnHyper,
    with_gradients: bool,
    pinned: Option<&[f64]>,
) -> Result<(ObjectiveBreakdown, Option<ObjectiveGradients>)> {
    let num_domains = validate_batch(batch, head)?;
    let stats = batch_norm_means(
        batch.iter().map(|s| (s.domain, s.latent.as_slice())),
        num_domains,
    )?;
    if let Some(p) = pinned {
        if p.len() != num_domains {
            return Err(Error::DimensionMismatch {
                expected: num_domains,
                got: p.len(),
            });
        }
    }
    let classes = head.len();

    let mut loss_sum = 0.0;
    let mut regularizer_sum = 0.0;
    let mut head_grad = vec![vec![0.0; head[0].len()]; classes];
    let mut latent_grads = Vec::with_capacity(if with_gradients { batch.len() } else { 0 });

    for s in batch {
        let z = &s.latent;
        let r = norm(z);
        let mu = stats.mu_d[s.domain];
        let mu_pert = pinned.map_or(mu, |p| p[s.domain]);
        let cosines = cosine_scores(z, head)?;
        let delta = hyper.gamma_delta * (r + hyper.beta_rw * mu_pert);
        let (logits, pcs) = perturbed_logits(&cosines, s.label, delta, hyper);
        loss_sum += log_sum_exp(&logits) - logits[s.label];
        let reg = norm_regularizer(mu, hyper);
        regularizer_sum += reg;

        if !with_gradients {
            continue;
        }

        let p = softmax(&logits);
        let mut gz = vec![0.0; z.len()];
        // dℓ/dr collects the perturbation path and the regularizer path.
        let mut g_r = 0.0;
        for c in 0..classes {
            let indicator = if c == s.label { 1.0 } else { 0.0 };
            let g_logit = p[c] - indicator;
            let g_cos = g_logit * hyper.kappa * pcs[c].d_cos;
            if c == s.label && !hyper.stop_grad_radius {
                g_r += g_logit * hyper.kappa * pcs[c].d_delta * hyper.gamma_delta;
            }
            if g_cos != 0.0 {
                let w = &head[c];
                for k in 0..z.len() {
                    head_grad[c][k] += g_cos * z[k] / r;
                    gz[k] += g_cos * (w[k] - cosines[c] * z[k] / r) / r;
                }
            }
        }
        // Σ_{i∈d} η(μ_d/μ* + μ*/μ_d) differentiated w.r.t. r_i gives
        // η(1/μ* - μ*/μ_d²) because μ_d is the mean of n_d norms.
        g_r += hyper.eta * (1.0 / hyper.mu_star - hyper.mu_star / (mu * mu));
        for k in 0..z.len() {
            gz[k] += g_r * z[k] / r;
        }
        latent_grads.push(gz);
    }

    let breakdown = ObjectiveBreakdown {
        total: loss_sum + regularizer_sum,
        loss_sum,
        regularizer_sum,
        stats,
    };
    let grads = with_gradients.then_some(ObjectiveGradients {
        head: head_grad,
        latents: latent_grads,
    });
    Ok((breakdown, grads))
}

/// Plain softmax cross-entropy on unnormalized linear logits `W z`, for the
/// linear-head ERM baseline. Returns the summed loss and its gradients.
pub fn linear_softmax_objective(
    batch: &[LatentSample],
    weights: &[Vec<f64>],
    with_gradients: bool,
) -> Result<(f64, Option<ObjectiveGradients>)> {
    validate_batch(batch, weights)?;
    let classes = weights.len();
    let mut total = 0.0;
    let mut head_grad = vec![vec![0.0; weights[0].len()]; classes];
    let mut latent_grads = Vec::new();
    for s in batch {
        let logits: Vec<f64> = weights.iter().map(|w| dot(w, &s.latent)).collect();
        total += log_sum_exp(&logits) - logits[s.label];
        if !with_gradients {
            continue;
        }
        let p = softmax(&logits);
        let mut gz = vec![0.0; s.latent.len()];
        for c in 0..classes {
            let g = p[c] - if c == s.label { 1.0 } else { 0.0 };
            for k in 0..gz.len() {
                head_grad[c][k] += g * s.latent[k];
                gz[k] += g * weights[c][k];
            }
        }
        latent_grads.push(gz);
    }
    let grads = with_gradients.then_some(ObjectiveGradients {
        head: head_grad,
        latents: latent_grads,
    });
    Ok((total, grads))
}
