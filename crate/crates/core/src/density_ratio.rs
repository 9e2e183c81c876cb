//! Target/source density ratios under angular invariance, and the target
//! posterior they induce on a vMF mixture.
//!
//! When two class-conditional laws share their angular part, their ratio
//! collapses to a ratio of radial conditionals. With a uniform target band of
//! width `δ` and an exponential source law of mean `μ`, that ratio is
//! `μ e^{r/μ} / δ`, with first-order form `(μ + r) / δ`.

use crate::distributions::norm::{exponential_log_density, uniform_log_density};
use crate::distributions::{NormLaws, VmfMixture};
use crate::error::{Error, Result};
use crate::vecops::{dot, norm, softmax};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioInputs {
    radius: f64,
    source_mean: f64,
    target_width: f64,
}

impl RatioInputs {
    pub fn new(radius: f64, source_mean: f64, target_width: f64) -> Result<Self> {
        for (key, v) in [
            ("radius", radius),
            ("source_mean", source_mean),
            ("target_width", target_width),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    key,
                    format!("must be finite and > 0, got {v}"),
                ));
            }
        }
        Ok(Self {
            radius,
            source_mean,
            target_width,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn source_mean(&self) -> f64 {
        self.source_mean
    }

    pub fn target_width(&self) -> f64 {
        self.target_width
    }
}

/// `μ exp(r/μ) / δ`.
pub fn ratio_exact(inp: &RatioInputs) -> f64 {
    log_ratio_exact(inp).exp()
}

pub fn log_ratio_exact(inp: &RatioInputs) -> f64 {
    inp.source_mean.ln() + inp.radius / inp.source_mean - inp.target_width.ln()
}

/// `(μ + r) / δ`.
pub fn ratio_linear(inp: &RatioInputs) -> f64 {
    (inp.source_mean + inp.radius) / inp.target_width
}

/// Exact ratio of the radial densities that refuses radii outside the target
/// support `[target_lower, target_lower + δ]`, where the uniform density is 0.
pub fn ratio_exact_strict(inp: &RatioInputs, target_lower: f64) -> Result<f64> {
    let upper = target_lower + inp.target_width;
    if inp.radius < target_lower || inp.radius > upper {
        return Err(Error::OutsideSupport {
            radius: inp.radius,
            lower: target_lower,
            upper,
        });
    }
    let log_target = uniform_log_density(inp.radius, target_lower, inp.target_width);
    let log_source = exponential_log_density(inp.radius, inp.source_mean);
    Ok((log_target - log_source).exp())
}

/// `p^t(y | z) ∝ exp(κ <w_y, z/‖z‖>) · w(‖z‖ | d, y) · P(y)`.
///
/// `per_class_means` supplies `μ_{d,y}`; when absent every class uses the
/// domain-level mean `μ_d`.
pub fn target_posterior(
    z: &[f64],
    mixture: &VmfMixture,
    norms: &NormLaws,
    domain: usize,
    per_class_means: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if z.len() != mixture.dim() {
        return Err(Error::DimensionMismatch {
            expected: mixture.dim(),
            got: z.len(),
        });
    }
    let r = norm(z);
    if r == 0.0 {
        return Err(Error::ZeroVector);
    }
    let c = mixture.num_classes();
    let domain_mean = norms.source_mean(domain)?;
    if let Some(means) = per_class_means {
        if means.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: means.len(),
            });
        }
    }

    let kappa = mixture.concentration();
    let mut logits = Vec::with_capacity(c);
    for (y, (comp, &prior)) in mixture
        .components()
        .iter()
        .zip(mixture.class_priors())
        .enumerate()
    {
        let mu = per_class_means.map_or(domain_mean, |m| m[y]);
        let inp = RatioInputs::new(r, mu, norms.target_width())?;
        let cos = dot(comp.mean_direction(), z) / r;
        logits.push(kappa * cos + log_ratio_exact(&inp) + prior.ln());
    }
    Ok(softmax(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::mixture_posterior;

    #[test]
    fn exact_ratio_examples() {
        let v = ratio_exact(&RatioInputs::new(0.1, 1.0, 1.0).unwrap());
        assert!((v - 0.1_f64.exp()).abs() < 1e-15);
        assert!((v - 1.10517).abs() < 1e-5);

        let v = ratio_exact(&RatioInputs::new(2.0, 2.0, 4.0).unwrap());
        assert!((v - 2.0 * 1.0_f64.exp() / 4.0).abs() < 1e-15);
        assert!((v - 1.35914).abs() < 1e-5);

        // r → 0+: both forms approach μ/δ
        let inp = RatioInputs::new(1e-300, 3.0, 2.0).unwrap();
        assert!((ratio_exact(&inp) - 1.5).abs() < 1e-15);
        assert!((ratio_linear(&inp) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn linear_ratio_examples() {
        assert!((ratio_linear(&RatioInputs::new(0.1, 1.0, 1.0).unwrap()) - 1.1).abs() < 1e-15);
        let inp = RatioInputs::new(1.0, 1.0, 1.0).unwrap();
        assert_eq!(ratio_linear(&inp), 2.0);
        assert!((ratio_exact(&inp) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn strict_ratio_checks_support() {
        let inp = RatioInputs::new(3.0, 2.0, 4.0).unwrap();
        let strict = ratio_exact_strict(&inp, 2.0).unwrap();
        assert!((strict - ratio_exact(&inp)).abs() / strict < 1e-14);
        assert!(matches!(
            ratio_exact_strict(&inp, 3.5),
            Err(Error::OutsideSupport { .. })
        ));
    }

    #[test]
    fn inputs_must_be_positive() {
        assert!(RatioInputs::new(0.0, 1.0, 1.0).is_err());
        assert!(RatioInputs::new(1.0, -1.0, 1.0).is_err());
        assert!(RatioInputs::new(1.0, 1.0, f64::NAN).is_err());
    }

    fn two_class() -> VmfMixture {
        VmfMixture::uniform(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2.0).unwrap()
    }

    #[test]
    fn constant_weights_cancel() {
        let mix = two_class();
        let laws = NormLaws::new(vec![1.5], 0.0, 1.0).unwrap();
        let z = [0.3, -2.0];
        let p = target_posterior(&z, &mix, &laws, 0, None).unwrap();
        let zs: Vec<f64> = z.iter().map(|x| x / norm(&z)).collect();
        let q = mixture_posterior(&zs, &mix).unwrap();
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn per_class_means_shift_posterior() {
        let mix = two_class();
        let laws = NormLaws::new(vec![1.0], 0.0, 1.0).unwrap();
        // equal cosines to both centers, radius 1
        let z = [
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ];
        let p = target_posterior(&z, &mix, &laws, 0, Some(&[1.0, 2.0])).unwrap();
        let a = 1.0_f64.exp();
        let b = 2.0 * 0.5_f64.exp();
        assert!((p[0] - a / (a + b)).abs() < 1e-14);
        assert!((p[0] - 0.45186).abs() < 1e-5);
        assert!((p[1] - 0.54814).abs() < 1e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_prior_and_errors() {
        let comps = two_class().components().to_vec();
        let mix = VmfMixture::new(comps, vec![1.0, 0.0]).unwrap();
        let laws = NormLaws::new(vec![1.0], 0.0, 1.0).unwrap();
        assert_eq!(
            target_posterior(&[0.0, 3.0], &mix, &laws, 0, Some(&[1.0, 2.0])).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(matches!(
            target_posterior(&[0.0, 0.0], &mix, &laws, 0, None),
            Err(Error::ZeroVector)
        ));
        assert!(matches!(
            target_posterior(&[1.0, 0.0, 0.0], &mix, &laws, 0, None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            target_posterior(&[1.0, 0.0], &mix, &laws, 3, None),
            Err(Error::UnknownDomainIndex(3))
        ));
    }
}
