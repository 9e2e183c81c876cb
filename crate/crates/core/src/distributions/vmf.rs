//! von Mises–Fisher components and class mixtures on the unit sphere.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use super::bessel::log_bessel_i;
use crate::error::{Error, Result};
use crate::vecops::{dot, norm, softmax};

const UNIT_TOL_PARAMS: f64 = 1e-10;
const UNIT_TOL_POINT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct VmfParams {
    mean_direction: Vec<f64>,
    concentration: f64,
}

impl VmfParams {
    pub fn new(mean_direction: Vec<f64>, concentration: f64) -> Result<Self> {
        if mean_direction.len() < 2 {
            return Err(Error::DimensionTooSmall(mean_direction.len()));
        }
        let n = norm(&mean_direction);
        if (n - 1.0).abs() > UNIT_TOL_PARAMS {
            return Err(Error::NotUnit(n));
        }
        if !(concentration >= 0.0) || !concentration.is_finite() {
            return Err(Error::invalid(
                "concentration",
                format!("must be finite and >= 0, got {concentration}"),
            ));
        }
        Ok(Self {
            mean_direction,
            concentration,
        })
    }

    pub fn mean_direction(&self) -> &[f64] {
        &self.mean_direction
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn dim(&self) -> usize {
        self.mean_direction.len()
    }
}

/// Log of the vMF normalizing constant `κ^{n/2-1} / ((2π)^{n/2} I_{n/2-1}(κ))`.
/// At `κ = 0` this is the log reciprocal surface area of `S^{n-1}`.
pub fn vmf_log_normalizer(dim: usize, kappa: f64) -> Result<f64> {
    let half = dim as f64 / 2.0;
    if kappa == 0.0 {
        return Ok(log_uniform_sphere_density(dim));
    }
    let nu = half - 1.0;
    Ok(nu * kappa.ln() - half * (2.0 * PI).ln() - log_bessel_i(nu, kappa)?)
}

/// `-log |S^{n-1}| = log Γ(n/2) - log 2 - (n/2) log π`.
pub fn log_uniform_sphere_density(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    ln_gamma(half) - std::f64::consts::LN_2 - half * PI.ln()
}

fn check_point(z_star: &[f64], dim: usize) -> Result<()> {
    if z_star.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: z_star.len(),
        });
    }
    let n = norm(z_star);
    if (n - 1.0).abs() > UNIT_TOL_POINT {
        return Err(Error::NotUnit(n));
    }
    Ok(())
}

pub fn vmf_log_density(z_star: &[f64], params: &VmfParams) -> Result<f64> {
    check_point(z_star, params.dim())?;
    let k = params.concentration;
    if k == 0.0 {
        return Ok(log_uniform_sphere_density(params.dim()));
    }
    Ok(vmf_log_normalizer(params.dim(), k)? + k * dot(&params.mean_direction, z_star))
}

/// Uniform draw on `S^{n-1}` from a normalized Gaussian vector.
pub fn uniform_sphere_sample<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&g);
        if n > 1e-12 {
            return g.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws one unit vector from `vMF(w, κ)`.
///
/// The cosine `t = <w, z>` comes from Wood's rejection sampler for the
/// marginal `∝ e^{κt} (1-t²)^{(n-3)/2}`; the tangent part is a uniform
/// direction orthogonal to `w`.
pub fn vmf_sample<R: Rng + ?Sized>(params: &VmfParams, rng: &mut R) -> Vec<f64> {
    let dim = params.dim();
    let mu = &params.mean_direction;
    let kappa = params.concentration;
    if kappa == 0.0 {
        return uniform_sphere_sample(dim, rng);
    }

    let t = sample_cosine(dim, kappa, rng);

    let tangent = loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let proj = dot(&v, mu);
        for (vi, mi) in v.iter_mut().zip(mu) {
            *vi -= proj * mi;
        }
        let n = norm(&v);
        if n > 1e-12 {
            break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };

    let s = (1.0 - t * t).max(0.0).sqrt();
    mu.iter()
        .zip(&tangent)
        .map(|(m, v)| t * m + s * v)
        .collect()
}

fn sample_cosine<R: Rng + ?Sized>(dim: usize, kappa: f64, rng: &mut R) -> f64 {
    let p1 = dim as f64 - 1.0;
    // b = (-2κ + sqrt(4κ² + (n-1)²)) / (n-1), rewritten to avoid cancellation
    let b = p1 / (2.0 * kappa + (4.0 * kappa * kappa + p1 * p1).sqrt());
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + p1 * (1.0 - x0 * x0).ln();
    let beta = Beta::new(p1 / 2.0, p1 / 2.0).expect("beta shape parameters are positive");
    loop {
        let z: f64 = beta.sample(rng);
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        let u: f64 = rng.random();
        if kappa * w + p1 * (1.0 - x0 * w).ln() - c >= u.ln() {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// Class-conditional vMF components with a shared concentration, plus priors.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfMixture {
    components: Vec<VmfParams>,
    class_priors: Vec<f64>,
}

impl VmfMixture {
    pub fn new(components: Vec<VmfParams>, class_priors: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid(
                "components",
                "mixture needs at least one component",
            ));
        }
        if components.len() != class_priors.len() {
            return Err(Error::DimensionMismatch {
                expected: components.len(),
                got: class_priors.len(),
            });
        }
        let dim = components[0].dim();
        let kappa = components[0].concentration;
        for c in &components[1..] {
            if c.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.dim(),
                });
            }
            if c.concentration != kappa {
                return Err(Error::invalid(
                    "components",
                    "all components must share one concentration",
                ));
            }
        }
        if class_priors.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::invalid("class_priors", "priors must be nonnegative"));
        }
        let total: f64 = class_priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::NotSimplex(total));
        }
        Ok(Self {
            components,
            class_priors,
        })
    }

    /// Equal priors over the given unit centers.
    pub fn uniform(centers: Vec<Vec<f64>>, kappa: f64) -> Result<Self> {
        let c = centers.len();
        let components = centers
            .into_iter()
            .map(|w| VmfParams::new(w, kappa))
            .collect::<Result<Vec<_>>>()?;
        Self::new(components, vec![1.0 / c as f64; c])
    }

    pub fn components(&self) -> &[VmfParams] {
        &self.components
    }

    pub fn class_priors(&self) -> &[f64] {
        &self.class_priors
    }

    pub fn num_classes(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn concentration(&self) -> f64 {
        self.components[0].concentration
    }

    /// Log-mixture density `log Σ_y P(y) V(z*; w_y, κ)`.
    pub fn log_density(&self, z_star: &[f64]) -> Result<f64> {
        let terms = self
            .components
            .iter()
            .zip(&self.class_priors)
            .map(|(c, &p)| Ok(p.ln() + vmf_log_density(z_star, c)?))
            .collect::<Result<Vec<f64>>>()?;
        Ok(crate::vecops::log_sum_exp(&terms))
    }
}

/// `P(y | z*) ∝ P(y) exp(κ <w_y, z*>)`.
pub fn mixture_posterior(z_star: &[f64], mixture: &VmfMixture) -> Result<Vec<f64>> {
    check_point(z_star, mixture.dim())?;
    let kappa = mixture.concentration();
    let logits: Vec<f64> = mixture
        .components
        .iter()
        .zip(&mixture.class_priors)
        .map(|(c, &p)| p.ln() + kappa * dot(&c.mean_direction, z_star))
        .collect();
    Ok(softmax(&logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(dim: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    #[test]
    fn density_examples() {
        let p = VmfParams::new(e(3, 0), 0.0).unwrap();
        let v = vmf_log_density(&e(3, 1), &p).unwrap();
        assert!((v - (1.0 / (4.0 * PI)).ln()).abs() < 1e-14);

        let p = VmfParams::new(e(3, 0), 1.0).unwrap();
        let v = vmf_log_density(&e(3, 0), &p).unwrap();
        let closed = (1.0_f64.exp() / (4.0 * PI * 1.0_f64.sinh())).ln();
        assert!((v - closed).abs() < 1e-13);
        assert!((v - (-1.6924)).abs() < 1e-4);
    }

    #[test]
    fn density_rejects_bad_points() {
        let p = VmfParams::new(e(3, 0), 1.0).unwrap();
        assert!(matches!(
            vmf_log_density(&e(2, 0), &p),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            vmf_log_density(&[2.0, 0.0, 0.0], &p),
            Err(Error::NotUnit(_))
        ));
        assert!(VmfParams::new(vec![1.0, 1.0], 1.0).is_err());
        assert!(VmfParams::new(e(2, 0), -1.0).is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_unit() {
        let p = VmfParams::new(e(4, 2), 7.0).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let x = vmf_sample(&p, &mut a);
            let y = vmf_sample(&p, &mut b);
            assert_eq!(x, y);
            assert!((norm(&x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_draws_have_small_mean() {
        let p = VmfParams::new(e(3, 0), 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mean = vec![0.0; 3];
        let n = 100_000;
        for _ in 0..n {
            for (m, x) in mean.iter_mut().zip(vmf_sample(&p, &mut rng)) {
                *m += x / n as f64;
            }
        }
        assert!(norm(&mean) <= 0.02);
    }

    #[test]
    fn concentrated_draws_match_resultant_length() {
        let p = VmfParams::new(e(3, 0), 10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let cosines: Vec<f64> = (0..n).map(|_| vmf_sample(&p, &mut rng)[0]).collect();
        let mean = cosines.iter().sum::<f64>() / n as f64;
        let var = cosines.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let target = 1.0 / 10.0_f64.tanh() - 0.1;
        assert!(
            (mean - target).abs() < 3.0 * se,
            "mean {mean} target {target} se {se}"
        );
    }

    #[test]
    fn posterior_examples() {
        let m = VmfMixture::uniform(vec![e(2, 0), vec![-1.0, 0.0]], 0.0).unwrap();
        let p = mixture_posterior(&e(2, 0), &m).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let m = VmfMixture::uniform(vec![e(2, 0), vec![-1.0, 0.0]], 1.0).unwrap();
        let p = mixture_posterior(&e(2, 0), &m).unwrap();
        let expected = 1.0_f64.exp() / (1.0_f64.exp() + (-1.0_f64).exp());
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.88080).abs() < 1e-5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let comps = vec![
            VmfParams::new(e(2, 0), 3.0).unwrap(),
            VmfParams::new(e(2, 1), 3.0).unwrap(),
        ];
        let m = VmfMixture::new(comps, vec![1.0, 0.0]).unwrap();
        assert_eq!(mixture_posterior(&e(2, 1), &m).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn mixture_validation() {
        let a = VmfParams::new(e(2, 0), 1.0).unwrap();
        let b = VmfParams::new(e(2, 1), 2.0).unwrap();
        assert!(VmfMixture::new(vec![a.clone(), b], vec![0.5, 0.5]).is_err());
        assert!(matches!(
            VmfMixture::new(vec![a.clone(), a.clone()], vec![0.6, 0.6]),
            Err(Error::NotSimplex(_))
        ));
        assert!(VmfMixture::new(vec![a.clone(), a], vec![-0.5, 1.5]).is_err());
    }
}
