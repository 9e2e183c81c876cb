//! Probability laws: vMF components and mixtures on the sphere, radial norm
//! laws, and the Bessel function behind the vMF normalizer.

pub mod bessel;
pub mod norm;
pub mod vmf;

pub use bessel::{log_bessel_i, mean_resultant_length};
pub use norm::{exponential_kl, sample_radius, NormLaws, RadiusLaw};
pub use vmf::{
    mixture_posterior, uniform_sphere_sample, vmf_log_density, vmf_log_normalizer, vmf_sample,
    VmfMixture, VmfParams,
};
