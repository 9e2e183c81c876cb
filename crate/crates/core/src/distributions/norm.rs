//! Radial laws: exponential norms in source domains, a uniform band in the
//! target, and the exponential KL divergence used as the norm regularizer.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};

/// Per-source exponential norm means and the target's uniform support
/// `[target_lower, target_lower + target_width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormLaws {
    source_means: Vec<f64>,
    target_lower: f64,
    target_width: f64,
}

impl NormLaws {
    pub fn new(source_means: Vec<f64>, target_lower: f64, target_width: f64) -> Result<Self> {
        if source_means.is_empty() {
            return Err(Error::invalid(
                "source_means",
                "need at least one source domain",
            ));
        }
        if let Some(bad) = source_means.iter().find(|&&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::invalid(
                "source_means",
                format!("means must be positive, got {bad}"),
            ));
        }
        if !(target_lower >= 0.0) || !target_lower.is_finite() {
            return Err(Error::invalid(
                "target_lower",
                format!("must be >= 0, got {target_lower}"),
            ));
        }
        if !(target_width > 0.0) || !target_width.is_finite() {
            return Err(Error::invalid(
                "target_width",
                format!("must be > 0, got {target_width}"),
            ));
        }
        Ok(Self {
            source_means,
            target_lower,
            target_width,
        })
    }

    pub fn source_means(&self) -> &[f64] {
        &self.source_means
    }

    pub fn source_mean(&self, domain: usize) -> Result<f64> {
        self.source_means
            .get(domain)
            .copied()
            .ok_or(Error::UnknownDomainIndex(domain))
    }

    pub fn num_sources(&self) -> usize {
        self.source_means.len()
    }

    pub fn target_lower(&self) -> f64 {
        self.target_lower
    }

    pub fn target_width(&self) -> f64 {
        self.target_width
    }

    pub fn target_upper(&self) -> f64 {
        self.target_lower + self.target_width
    }
}

/// Which radial law to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusLaw {
    Source(usize),
    Target,
}

pub fn sample_radius<R: Rng + ?Sized>(
    law: RadiusLaw,
    norms: &NormLaws,
    rng: &mut R,
) -> Result<f64> {
    match law {
        RadiusLaw::Source(d) => {
            let mu = norms.source_mean(d)?;
            let exp =
                Exp::new(1.0 / mu).map_err(|e| Error::invalid("source_means", e.to_string()))?;
            Ok(exp.sample(rng))
        }
        RadiusLaw::Target => {
            let u: f64 = rng.random();
            Ok(norms.target_lower + norms.target_width * u)
        }
    }
}

/// `log p(r)` for an exponential law with mean `mu`.
pub fn exponential_log_density(r: f64, mu: f64) -> f64 {
    if r < 0.0 {
        f64::NEG_INFINITY
    } else {
        -mu.ln() - r / mu
    }
}

/// `log p(r)` for `Uniform[lower, lower + width]`.
pub fn uniform_log_density(r: f64, lower: f64, width: f64) -> f64 {
    if r < lower || r > lower + width {
        f64::NEG_INFINITY
    } else {
        -width.ln()
    }
}

/// `KL(Exp(1/μ*) ‖ Exp(1/μ)) = log(μ/μ*) + μ*/μ - 1`.
pub fn exponential_kl(mu_star: f64, mu: f64) -> Result<f64> {
    for v in [mu_star, mu] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::NonPositiveRate(v));
        }
    }
    let x = mu_star / mu;
    // log(μ/μ*) + μ*/μ - 1 = x - 1 - log x; ln_1p keeps precision near x = 1
    Ok((x - 1.0) - (x - 1.0).ln_1p())
}
