//! Multi-domain synthetic tasks whose latent directions follow one shared vMF
//! mixture in every domain while the latent norm law changes per domain.

mod dataset;

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use dataset::{Dataset, DomainTag, Sample};

use crate::distributions::{
    mixture_posterior, sample_radius, uniform_sphere_sample, vmf_sample, NormLaws, RadiusLaw,
    VmfMixture,
};
use crate::error::{Error, Result};
use crate::vecops::{argmax, dot, norm};

pub const REPULSION_MAX_ITERATIONS: usize = 10_000;
const REPULSION_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    #[default]
    Identity,
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    #[default]
    None,
    AngularShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub latent_dim: usize,
    pub classes: usize,
    /// One exponential norm mean per source domain.
    pub source_means: Vec<f64>,
    pub kappa_gen: f64,
    pub target_lower: f64,
    pub target_width: f64,
    pub samples_per_class: usize,
    pub observation: ObservationKind,
    pub violation: ViolationKind,
    /// Rotation angle of the target centers under `angular_shift`.
    pub shift_angle: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            classes: 5,
            source_means: vec![3.0, 5.0, 8.0],
            kappa_gen: 20.0,
            target_lower: 10.0,
            target_width: 6.0,
            samples_per_class: 200,
            observation: ObservationKind::Identity,
            violation: ViolationKind::None,
            shift_angle: PI / 3.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_sources(&self) -> usize {
        self.source_means.len()
    }

    /// Rows per domain file.
    pub fn samples_per_domain(&self) -> usize {
        self.samples_per_class * self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::invalid("task.latent_dim", "must be >= 2"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("task.classes", "must be >= 2"));
        }
        if self.source_means.is_empty() {
            return Err(Error::invalid(
                "task.source_means",
                "need at least one source domain",
            ));
        }
        if let Some(m) = self
            .source_means
            .iter()
            .find(|&&m| !(m > 0.0) || !m.is_finite())
        {
            return Err(Error::invalid(
                "task.source_means",
                format!("every mean must be > 0, got {m}"),
            ));
        }
        if !(self.kappa_gen >= 0.0) || !self.kappa_gen.is_finite() {
            return Err(Error::invalid("task.kappa_gen", "must be >= 0"));
        }
        if !(self.target_lower >= 0.0) || !self.target_lower.is_finite() {
            return Err(Error::invalid("task.target_lower", "must be >= 0"));
        }
        if !(self.target_width > 0.0) || !self.target_width.is_finite() {
            return Err(Error::invalid("task.target_width", "must be > 0"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::invalid("task.samples_per_class", "must be > 0"));
        }
        if !self.shift_angle.is_finite() {
            return Err(Error::invalid("task.shift_angle", "must be finite"));
        }
        Ok(())
    }

    pub fn norm_laws(&self) -> Result<NormLaws> {
        NormLaws::new(
            self.source_means.clone(),
            self.target_lower,
            self.target_width,
        )
    }
}

/// Norm-preserving map from latent space to observation space.
#[derive(Debug, Clone, PartialEq)]
pub enum ObservationMap {
    Identity,
    Rotation(DMatrix<f64>),
}

impl ObservationMap {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            ObservationMap::Identity => z.to_vec(),
            ObservationMap::Rotation(q) => (q * nalgebra::DVector::from_column_slice(z))
                .as_slice()
                .to_vec(),
        }
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ObservationMap::Identity => x.to_vec(),
            ObservationMap::Rotation(q) => (q.transpose()
                * nalgebra::DVector::from_column_slice(x))
            .as_slice()
            .to_vec(),
        }
    }
}

/// Haar-distributed orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn random_rotation<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub mixture: VmfMixture,
    pub observation: ObservationMap,
    /// Orthonormal pair spanning the plane used by `angular_shift`.
    pub shift_plane: (Vec<f64>, Vec<f64>),
}

impl SyntheticTask {
    /// The angular law of `which`; differs from `mixture` only for the target
    /// under `angular_shift`.
    pub fn mixture_for(&self, spec: &SyntheticSpec, which: DomainTag) -> Result<VmfMixture> {
        if which != DomainTag::Target || spec.violation == ViolationKind::None {
            return Ok(self.mixture.clone());
        }
        let (u, v) = &self.shift_plane;
        let (s, c) = spec.shift_angle.sin_cos();
        let centers = self
            .mixture
            .components()
            .iter()
            .map(|comp| {
                let w = comp.mean_direction();
                let a = dot(w, u);
                let b = dot(w, v);
                let da = a * c - b * s - a;
                let db = a * s + b * c - b;
                let rotated: Vec<f64> = w
                    .iter()
                    .zip(u.iter().zip(v))
                    .map(|(wi, (ui, vi))| wi + da * ui + db * vi)
                    .collect();
                let n = norm(&rotated);
                rotated.into_iter().map(|x| x / n).collect()
            })
            .collect();
        VmfMixture::uniform(centers, self.mixture.concentration())
    }
}

pub fn min_pairwise_angle(centers: &[Vec<f64>]) -> f64 {
    let mut best = PI;
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let c = dot(&centers[i], &centers[j]).clamp(-1.0, 1.0);
            best = best.min(c.acos());
        }
    }
    best
}

/// Pushes centers apart along normalized pairwise differences, renormalizing
/// onto the sphere after each sweep, until the smallest pairwise angle
/// reaches `threshold`.
pub fn repel_centers(
    centers: &mut [Vec<f64>],
    threshold: f64,
    max_iterations: usize,
) -> Result<()> {
    for _ in 0..max_iterations {
        if min_pairwise_angle(centers) >= threshold {
            return Ok(());
        }
        let snapshot = centers.to_vec();
        for (i, w) in centers.iter_mut().enumerate() {
            let mut push = vec![0.0; w.len()];
            for (j, other) in snapshot.iter().enumerate() {
                if i == j {
                    continue;
                }
                let diff: Vec<f64> = snapshot[i].iter().zip(other).map(|(a, b)| a - b).collect();
                let d = norm(&diff);
                if d < 1e-12 {
                    continue;
                }
                for (p, x) in push.iter_mut().zip(&diff) {
                    *p += x / (d * d);
                }
            }
            for (wi, p) in w.iter_mut().zip(&push) {
                *wi += REPULSION_STEP * p;
            }
            let n = norm(w);
            w.iter_mut().for_each(|x| *x /= n);
        }
    }
    if min_pairwise_angle(centers) >= threshold {
        return Ok(());
    }
    Err(Error::RepulsionFailed(max_iterations))
}

pub fn make_task<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<SyntheticTask> {
    spec.validate()?;
    let n = spec.latent_dim;
    let mut centers: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| uniform_sphere_sample(n, rng))
        .collect();
    repel_centers(
        &mut centers,
        PI / (2.0 * spec.classes as f64),
        REPULSION_MAX_ITERATIONS,
    )?;
    let mixture = VmfMixture::uniform(centers, spec.kappa_gen)?;

    let u = uniform_sphere_sample(n, rng);
    let v = loop {
        let raw = uniform_sphere_sample(n, rng);
        let a = dot(&raw, &u);
        let orth: Vec<f64> = raw.iter().zip(&u).map(|(r, ui)| r - a * ui).collect();
        let len = norm(&orth);
        if len > 1e-6 {
            break orth.into_iter().map(|x| x / len).collect::<Vec<f64>>();
        }
    };

    let observation = match spec.observation {
        ObservationKind::Identity => ObservationMap::Identity,
        ObservationKind::Rotation => ObservationMap::Rotation(random_rotation(n, rng)),
    };
    Ok(SyntheticTask {
        mixture,
        observation,
        shift_plane: (u, v),
    })
}

pub fn sample_domain<R: Rng + ?Sized>(
    task: &SyntheticTask,
    spec: &SyntheticSpec,
    which: DomainTag,
    count: usize,
    rng: &mut R,
) -> Result<Dataset> {
    let laws = spec.norm_laws()?;
    let law = match which {
        DomainTag::Source(d) => {
            laws.source_mean(d)?;
            RadiusLaw::Source(d)
        }
        DomainTag::Target => RadiusLaw::Target,
    };
    let mixture = task.mixture_for(spec, which)?;
    let classes = WeightedIndex::new(mixture.class_priors())
        .map_err(|e| Error::invalid("class_priors", e.to_string()))?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let y = classes.sample(rng);
        let u = vmf_sample(&mixture.components()[y], rng);
        let r = sample_radius(law, &laws, rng)?;
        let z: Vec<f64> = u.iter().map(|x| r * x).collect();
        samples.push(Sample {
            domain: which,
            label: y,
            x: task.observation.apply(&z),
        });
    }
    Dataset::new(spec.latent_dim, samples)
}

/// Accuracy of the Bayes classifier that knows the true angular law of
/// `which`, estimated on `count` fresh samples.
pub fn oracle_accuracy<R: Rng + ?Sized>(
    task: &SyntheticTask,
    spec: &SyntheticSpec,
    which: DomainTag,
    count: usize,
    rng: &mut R,
) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyDataset);
    }
    let data = sample_domain(task, spec, which, count, rng)?;
    let mixture = task.mixture_for(spec, which)?;
    let mut correct = 0usize;
    for s in data.samples() {
        let z = task.observation.invert(&s.x);
        let r = norm(&z);
        let unit: Vec<f64> = z.iter().map(|x| x / r).collect();
        if argmax(&mixture_posterior(&unit, &mixture)?) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / count as f64)
}

/// Stream index of the child generator used for `which`; the task itself
/// is drawn from stream 0.
pub fn stream_for(which: DomainTag) -> u64 {
    match which {
        DomainTag::Source(d) => 1 + d as u64,
        DomainTag::Target => 1 << 32,
    }
}

/// Child generator for `which` derived from the master seed.
pub fn child_rng(seed: u64, which: Option<DomainTag>) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.map_or(0, stream_for));
    rng
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub task: SyntheticTask,
    pub sources: Vec<Dataset>,
    pub target: Dataset,
}

/// Task plus one dataset per source domain and one for the target, each
/// drawn from its own child stream of `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<GeneratedData> {
    spec.validate()?;
    let task = make_task(spec, &mut child_rng(spec.seed, None))?;
    let count = spec.samples_per_domain();
    let sources = (0..spec.num_sources())
        .map(|d| {
            let which = DomainTag::Source(d);
            sample_domain(
                &task,
                spec,
                which,
                count,
                &mut child_rng(spec.seed, Some(which)),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let target = sample_domain(
        &task,
        spec,
        DomainTag::Target,
        count,
        &mut child_rng(spec.seed, Some(DomainTag::Target)),
    )?;
    Ok(GeneratedData {
        task,
        sources,
        target,
    })
}

/// Per-class empirical mean direction of the latent directions in `data`.
pub fn class_mean_directions(
    task: &SyntheticTask,
    data: &Dataset,
    classes: usize,
) -> Vec<(Vec<f64>, usize)> {
    let dim = data.dim();
    let mut sums = vec![(vec![0.0; dim], 0usize); classes];
    for s in data.samples() {
        let z = task.observation.invert(&s.x);
        let r = norm(&z);
        let (acc, n) = &mut sums[s.label];
        for (a, x) in acc.iter_mut().zip(&z) {
            *a += x / r;
        }
        *n += 1;
    }
    for (acc, n) in &mut sums {
        if *n > 0 {
            acc.iter_mut().for_each(|a| *a /= *n as f64);
        }
    }
    sums
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repelled_centers_meet_threshold() {
        let spec = SyntheticSpec {
            latent_dim: 2,
            classes: 2,
            ..Default::default()
        };
        for seed in 0..20 {
            let task = make_task(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let centers: Vec<Vec<f64>> = task
                .mixture
                .components()
                .iter()
                .map(|c| c.mean_direction().to_vec())
                .collect();
            assert!(min_pairwise_angle(&centers) >= PI / 4.0);
        }
    }

    #[test]
    fn centers_are_unit() {
        let spec = SyntheticSpec {
            latent_dim: 3,
            classes: 4,
            ..Default::default()
        };
        let task = make_task(&spec, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for c in task.mixture.components() {
            assert!((norm(c.mean_direction()) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn repulsion_cap_raises() {
        let mut centers = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]];
        assert!(matches!(
            repel_centers(&mut centers, PI, 5),
            Err(Error::RepulsionFailed(5))
        ));
    }

    #[test]
    fn rotation_is_orthogonal() {
        let q = random_rotation(6, &mut ChaCha8Rng::seed_from_u64(2));
        let eye = &q.transpose() * &q;
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((eye[(i, j)] - want).abs() < 1e-12);
            }
        }
        let map = ObservationMap::Rotation(q);
        let z = [0.3, -1.0, 2.0, 0.0, 5.0, -0.1];
        let back = map.invert(&map.apply(&z));
        for (a, b) in back.iter().zip(&z) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_radii_stay_in_band() {
        let spec = SyntheticSpec {
            target_lower: 2.0,
            target_width: 4.0,
            observation: ObservationKind::Rotation,
            ..Default::default()
        };
        let data = generate(&spec).unwrap();
        for s in data.target.samples() {
            let r = norm(&s.x);
            assert!((2.0 - 1e-12..=6.0 + 1e-12).contains(&r));
        }
        assert_eq!(data.sources.len(), 3);
        assert_eq!(data.target.len(), 1000);
    }

    #[test]
    fn invalid_specs() {
        let spec = SyntheticSpec {
            source_means: vec![3.0, 0.0],
            ..Default::default()
        };
        match spec.validate() {
            Err(Error::InvalidParameter { key, .. }) => assert_eq!(key, "task.source_means"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
