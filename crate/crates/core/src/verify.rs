//! Numerical checks of the library against oracles that do not share its
//! formulas: finite differences, quadrature, Monte Carlo and goodness-of-fit
//! tests. Each check reports a measured error and the tolerance it must meet.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::density_ratio::{ratio_exact, ratio_exact_strict, RatioInputs};
use crate::distributions::norm::{exponential_log_density, uniform_log_density};
use crate::distributions::{
    exponential_kl, mean_resultant_length, uniform_sphere_sample, vmf_log_density, vmf_sample,
    VmfParams,
};
use crate::error::{Error, Result};
use crate::loss::{aidgn_sample_loss, perturbed_cosine, AidgnHyper};
use crate::maxent::{closed_form_distribution, objective_value, solve_numeric, MaxEntInstance};
use crate::model::{
    objective_and_gradients, pinned_objective, Activation, ClassifierHead, FeatureExtractor,
    LossMode, Model,
};
use crate::polar::{
    cartesian_to_polar, polar_log_abs_det_jacobian, polar_to_cartesian, PolarPoint,
};
use crate::synth::{DomainTag, Sample};
use crate::vecops::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Geometry,
    Distributions,
    Maxent,
    Gradients,
}

impl Suite {
    pub const ALL: [Suite; 4] = [
        Suite::Geometry,
        Suite::Distributions,
        Suite::Maxent,
        Suite::Gradients,
    ];
}

/// Whether the measured value must stay below or above the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub measured: f64,
    pub tolerance: f64,
    pub bound: Bound,
    pub detail: String,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        match self.bound {
            Bound::AtMost => self.measured <= self.tolerance,
            Bound::AtLeast => self.measured >= self.tolerance,
        }
    }
}

/// Default tolerances keyed by check name; callers may override any entry.
pub fn default_tolerances() -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("polar_round_trip", 1e-9),
        ("polar_jacobian", 1e-4),
        ("exponential_kl_quadrature", 1e-6),
        ("vmf_normalization", 3.0),
        ("vmf_mean_resultant", 3.0),
        ("vmf_angle_ks", 1e-3),
        ("density_ratio_identity", 1e-10),
        ("maxent_closed_form", 1e-6),
        ("maxent_loss_identity", 1e-9),
        ("loss_gradient_fd", 1e-5),
        ("model_gradient_fd", 1e-5),
    ])
}

pub struct Verifier {
    tolerances: BTreeMap<&'static str, f64>,
    seed: u64,
}

impl Default for Verifier {
    fn default() -> Self {
        Self {
            tolerances: default_tolerances(),
            seed: 20_240_601,
        }
    }
}

impl Verifier {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn set_tolerance(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = self
            .tolerances
            .iter_mut()
            .find(|(k, _)| **k == name)
            .ok_or_else(|| Error::invalid("tol", format!("unknown check {name:?}")))?;
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::invalid("tol", format!("{name} must be > 0")));
        }
        *slot.1 = value;
        Ok(())
    }

    fn tol(&self, name: &str) -> f64 {
        self.tolerances[name]
    }

    fn rng(&self, salt: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(salt);
        rng
    }

    fn result(
        &self,
        name: &'static str,
        measured: f64,
        bound: Bound,
        detail: String,
    ) -> CheckResult {
        CheckResult {
            name,
            measured,
            tolerance: self.tol(name),
            bound,
            detail,
        }
    }

    pub fn run(&self, suite: Suite) -> Result<Vec<CheckResult>> {
        Ok(match suite {
            Suite::Geometry => vec![self.polar_round_trip(1000)?, self.polar_jacobian(200)?],
            Suite::Distributions => vec![
                self.exponential_kl_quadrature(100)?,
                self.vmf_normalization(100_000)?,
                self.vmf_mean_resultant(20_000)?,
                self.vmf_angle_ks(4000)?,
                self.density_ratio_identity(100)?,
            ],
            Suite::Maxent => {
                let (a, b) = self.maxent(1000)?;
                vec![a, b]
            }
            Suite::Gradients => vec![self.loss_gradient_fd(50)?, self.model_gradient_fd(50)?],
        })
    }

    /// Worst relative error of Cartesian → polar → Cartesian and of
    /// polar → Cartesian → polar over random points with `2 ≤ n ≤ 8`.
    pub fn polar_round_trip(&self, points: usize) -> Result<CheckResult> {
        let mut rng = self.rng(1);
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let n = rng.random_range(2..=8);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let z: Vec<f64> = (0..n)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let back = polar_to_cartesian(&cartesian_to_polar(&z)?);
            let r = norm(&z);
            for (a, b) in z.iter().zip(&back) {
                worst = worst.max((a - b).abs() / r);
            }

            let angles = random_interior_angles(n, 0.0, &mut rng);
            let p = PolarPoint::new(scale, angles.clone())?;
            let q = cartesian_to_polar(&polar_to_cartesian(&p))?;
            worst = worst.max((q.radius() - scale).abs() / scale);
            for (a, b) in angles.iter().zip(q.angles()) {
                let d = (a - b).abs();
                worst = worst.max(d.min(TAU - d));
            }
        }
        Ok(self.result(
            "polar_round_trip",
            worst,
            Bound::AtMost,
            format!("{points} points, max relative error"),
        ))
    }

    /// Closed-form `log|det J|` against the determinant of a central-difference
    /// Jacobian of the inverse map, over random points with `2 ≤ n ≤ 6`.
    pub fn polar_jacobian(&self, points: usize) -> Result<CheckResult> {
        let mut rng = self.rng(2);
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let n = rng.random_range(2..=6);
            let r = rng.random_range(0.5..3.0);
            let angles = random_interior_angles(n, 0.2, &mut rng);
            let mut coords = vec![r];
            coords.extend(&angles);
            let map = polar_coords_to_cartesian;
            let mut jac = DMatrix::zeros(n, n);
            for j in 0..n {
                let h = 1e-6 * coords[j].abs().max(1.0);
                let mut plus = coords.clone();
                let mut minus = coords.clone();
                plus[j] += h;
                minus[j] -= h;
                let (fp, fm) = (map(&plus), map(&minus));
                for i in 0..n {
                    jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            let fd = jac.determinant().abs();
            let closed = polar_log_abs_det_jacobian(&PolarPoint::new(r, angles)?, n)?.exp();
            worst = worst.max((fd / closed - 1.0).abs());
        }
        Ok(self.result(
            "polar_jacobian",
            worst,
            Bound::AtMost,
            format!("{points} points, max relative determinant error"),
        ))
    }

    /// `KL(Exp(1/μ*) ‖ Exp(1/μ))` against composite Simpson quadrature of
    /// `∫ p log(p/q)` after the substitution `x = μ* t`.
    pub fn exponential_kl_quadrature(&self, pairs: usize) -> Result<CheckResult> {
        let mut rng = self.rng(3);
        let mut worst = 0.0_f64;
        for _ in 0..pairs {
            let mu_star = 10f64.powf(rng.random_range(-2.0..2.0));
            let mu = 10f64.powf(rng.random_range(-2.0..2.0));
            let log_ratio = (mu / mu_star).ln();
            let slope = mu_star / mu - 1.0;
            let integrand = |t: f64| (-t).exp() * (log_ratio + t * slope);
            let quad = simpson(integrand, 0.0, 60.0, 60_000);
            worst = worst.max((quad - exponential_kl(mu_star, mu)?).abs());
        }
        Ok(self.result(
            "exponential_kl_quadrature",
            worst,
            Bound::AtMost,
            format!("{pairs} random pairs, max absolute error"),
        ))
    }

    /// Integral of the vMF density over the sphere, estimated by Monte Carlo
    /// in the polar angle from the mean direction. Reports the largest
    /// |estimate − 1| in standard errors over the grid.
    pub fn vmf_normalization(&self, samples: usize) -> Result<CheckResult> {
        let mut rng = self.rng(4);
        let mut worst = 0.0_f64;
        let mut worst_cell = String::new();
        for n in [2usize, 3, 5] {
            for kappa in [0.0, 1.0, 10.0, 110.0] {
                let w = uniform_sphere_sample(n, &mut rng);
                let v = orthogonal_unit(&w, &mut rng);
                let params = VmfParams::new(w.clone(), kappa)?;
                let log_area = log_sphere_area(n - 2);
                let mut values = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let theta = rng.random_range(0.0..PI);
                    let (s, c) = theta.sin_cos();
                    let u: Vec<f64> = w.iter().zip(&v).map(|(a, b)| c * a + s * b).collect();
                    let log_f =
                        vmf_log_density(&u, &params)? + log_area + (n as f64 - 2.0) * s.ln();
                    values.push(PI * log_f.exp());
                }
                let (mean, se) = mean_and_standard_error(&values);
                let z = (mean - 1.0).abs() / se.max(1e-12);
                if z > worst {
                    worst = z;
                    worst_cell = format!("n={n} kappa={kappa} estimate={mean:.6}");
                }
            }
        }
        Ok(self.result(
            "vmf_normalization",
            worst,
            Bound::AtMost,
            format!(
                "max |I-1|/se over n in {{2,3,5}}, kappa in {{0,1,10,110}}; worst {worst_cell}"
            ),
        ))
    }

    /// Sample mean of `<w, u>` from the sampler against the Bessel ratio
    /// `I_{n/2}(κ)/I_{n/2-1}(κ)`, in standard errors.
    pub fn vmf_mean_resultant(&self, samples: usize) -> Result<CheckResult> {
        let mut rng = self.rng(5);
        let mut worst = 0.0_f64;
        let mut worst_cell = String::new();
        for n in [2usize, 3, 5] {
            for kappa in [0.0, 1.0, 10.0, 110.0] {
                let w = uniform_sphere_sample(n, &mut rng);
                let params = VmfParams::new(w.clone(), kappa)?;
                let t: Vec<f64> = (0..samples)
                    .map(|_| dot(&vmf_sample(&params, &mut rng), &w))
                    .collect();
                let (mean, se) = mean_and_standard_error(&t);
                let want = mean_resultant_length(n, kappa)?;
                let z = (mean - want).abs() / se.max(1e-12);
                if z > worst {
                    worst = z;
                    worst_cell = format!("n={n} kappa={kappa} sample={mean:.6} expected={want:.6}");
                }
            }
        }
        Ok(self.result(
            "vmf_mean_resultant",
            worst,
            Bound::AtMost,
            format!("max |mean-A|/se; worst {worst_cell}"),
        ))
    }

    /// Kolmogorov–Smirnov test of sampled angles to the mean direction
    /// against the CDF of `sin^{n-2}θ e^{κ cos θ}` obtained by quadrature.
    /// Reports the smallest p-value over the grid.
    pub fn vmf_angle_ks(&self, samples: usize) -> Result<CheckResult> {
        let mut rng = self.rng(6);
        let mut lowest = 1.0_f64;
        let mut lowest_cell = String::new();
        for n in [2usize, 3, 5] {
            for kappa in [0.0, 1.0, 10.0, 110.0] {
                let w = uniform_sphere_sample(n, &mut rng);
                let params = VmfParams::new(w.clone(), kappa)?;
                let cdf = AngleCdf::new(n, kappa, 200_000);
                let mut thetas: Vec<f64> = (0..samples)
                    .map(|_| {
                        dot(&vmf_sample(&params, &mut rng), &w)
                            .clamp(-1.0, 1.0)
                            .acos()
                    })
                    .collect();
                thetas.sort_by(f64::total_cmp);
                let m = thetas.len() as f64;
                let d = thetas
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let f = cdf.eval(t);
                        (f - i as f64 / m).abs().max(((i + 1) as f64 / m - f).abs())
                    })
                    .fold(0.0, f64::max);
                let p = kolmogorov_p_value(d, thetas.len());
                if p < lowest {
                    lowest = p;
                    lowest_cell = format!("n={n} kappa={kappa} D={d:.5}");
                }
            }
        }
        Ok(self.result(
            "vmf_angle_ks",
            lowest,
            Bound::AtLeast,
            format!("min KS p-value over the grid; worst {lowest_cell}"),
        ))
    }

    /// Ratio of the target and source densities written in polar coordinates
    /// (Cartesian density times `|det J|`, with a shared vMF angular law)
    /// against the radial-only ratio.
    pub fn density_ratio_identity(&self, points: usize) -> Result<CheckResult> {
        let mut rng = self.rng(7);
        let mut worst = 0.0_f64;
        for _ in 0..points {
            let n = rng.random_range(2..=6);
            let kappa = rng.random_range(0.0..50.0);
            let w = uniform_sphere_sample(n, &mut rng);
            let params = VmfParams::new(w, kappa)?;
            let mu = rng.random_range(0.5..10.0);
            let lower = rng.random_range(0.5..10.0);
            let width = rng.random_range(0.5..8.0);
            let r = lower + width * rng.random_range(0.01..0.99);
            let p = PolarPoint::new(r, random_interior_angles(n, 0.05, &mut rng))?;
            let z = polar_to_cartesian(&p);
            let u: Vec<f64> = z.iter().map(|x| x / r).collect();
            let log_angular = vmf_log_density(&u, &params)?;
            let log_det = polar_log_abs_det_jacobian(&p, n)?;
            let radial_to_cartesian = -(n as f64 - 1.0) * r.ln();
            let log_target =
                uniform_log_density(r, lower, width) + log_angular + radial_to_cartesian + log_det;
            let log_source =
                exponential_log_density(r, mu) + log_angular + radial_to_cartesian + log_det;
            let joint_ratio = (log_target - log_source).exp();
            let inp = RatioInputs::new(r, mu, width)?;
            for radial in [ratio_exact(&inp), ratio_exact_strict(&inp, lower)?] {
                worst = worst.max((joint_ratio / radial - 1.0).abs());
            }
        }
        Ok(self.result(
            "density_ratio_identity",
            worst,
            Bound::AtMost,
            format!("{points} points, max relative error"),
        ))
    }

    /// Projected-gradient solution against the softmax closed form, and the
    /// objective at the numeric solution against the per-sample loss.
    pub fn maxent(&self, instances: usize) -> Result<(CheckResult, CheckResult)> {
        let mut rng = self.rng(8);
        let mut worst_p = 0.0_f64;
        let mut worst_v = 0.0_f64;
        for _ in 0..instances {
            let c = rng.random_range(2..=10);
            let kappa = rng.random_range(0.0..120.0_f64).max(1e-3);
            let cosines: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let y = rng.random_range(0..c);
            let hyper = AidgnHyper {
                kappa,
                gamma_delta: rng.random_range(0.0..0.05),
                beta_rw: rng.random_range(0.0..1.0),
                margin: rng.random_range(0.0..0.5),
                ..AidgnHyper::default()
            };
            let r = rng.random_range(0.1..20.0);
            let mu = rng.random_range(0.1..20.0);
            let delta = hyper.gamma_delta * (r + hyper.beta_rw * mu);
            let perturbed: Vec<f64> = cosines
                .iter()
                .enumerate()
                .map(|(k, &a)| {
                    let d = if k == y {
                        delta
                    } else {
                        hyper.gamma_delta * hyper.margin
                    };
                    perturbed_cosine(a, d)
                })
                .collect();
            let inst = MaxEntInstance::from_perturbed_scores(perturbed, y, kappa)?;
            let p = solve_numeric(&inst, 1e-10)?;
            let q = closed_form_distribution(&inst);
            for (a, b) in p.iter().zip(&q) {
                worst_p = worst_p.max((a - b).abs());
            }
            let loss = aidgn_sample_loss(&cosines, y, r, mu, &hyper)?;
            let total: f64 = p.iter().sum();
            let p: Vec<f64> = p.iter().map(|x| x / total).collect();
            worst_v = worst_v.max((objective_value(&p, &inst)? - loss).abs());
        }
        Ok((
            self.result(
                "maxent_closed_form",
                worst_p,
                Bound::AtMost,
                format!("{instances} instances, max sup-norm gap"),
            ),
            self.result(
                "maxent_loss_identity",
                worst_v,
                Bound::AtMost,
                format!("{instances} instances, max |objective - loss|"),
            ),
        ))
    }

    /// Analytic head and latent gradients of the batch objective against
    /// central differences.
    pub fn loss_gradient_fd(&self, instances: usize) -> Result<CheckResult> {
        let mut rng = self.rng(9);
        let mut worst = 0.0_f64;
        let mut done = 0;
        while done < instances {
            let inst = TinyInstance::draw(&mut rng, LossMode::Aidgn);
            if !inst.away_from_kinks()? {
                continue;
            }
            let err = inst.latent_level_error()?;
            worst = worst.max(err);
            done += 1;
        }
        Ok(self.result(
            "loss_gradient_fd",
            worst,
            Bound::AtMost,
            format!("{instances} instances, max relative error (head + latents)"),
        ))
    }

    /// Gradients backpropagated through a one-hidden-layer extractor against
    /// central differences over every parameter.
    pub fn model_gradient_fd(&self, instances: usize) -> Result<CheckResult> {
        let mut rng = self.rng(10);
        let mut worst = 0.0_f64;
        let mut done = 0;
        while done < instances {
            let mode = match done % 10 {
                8 => LossMode::ErmCosine,
                9 => LossMode::ErmLinear,
                _ => LossMode::Aidgn,
            };
            let inst = TinyInstance::draw(&mut rng, mode);
            if !inst.away_from_kinks()? {
                continue;
            }
            worst = worst.max(inst.model_level_error()?);
            done += 1;
        }
        Ok(self.result(
            "model_gradient_fd",
            worst,
            Bound::AtMost,
            format!("{instances} instances, max relative error over all parameters"),
        ))
    }
}

/// Random tiny network, head and grouped batch for gradient checks.
pub struct TinyInstance {
    pub model: Model,
    pub batch: Vec<Vec<Sample>>,
    pub hyper: AidgnHyper,
    pub mode: LossMode,
}

impl TinyInstance {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, mode: LossMode) -> Self {
        let input = rng.random_range(2..=4);
        let hidden = rng.random_range(2..=5);
        let latent = rng.random_range(2..=4);
        let classes = rng.random_range(2..=4);
        let domains = rng.random_range(1..=3);
        let extractor = FeatureExtractor::init(&[input, hidden, latent], Activation::Softplus, rng)
            .expect("valid widths");
        let mut extractor = extractor;
        for l in &mut extractor.layers {
            l.bias
                .iter_mut()
                .for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        let head = ClassifierHead::init(mode.head_kind(), classes, latent, rng);
        let mut remaining = 6 - domains;
        let batch = (0..domains)
            .map(|d| {
                let extra = if remaining > 0 {
                    rng.random_range(0..=remaining.min(1))
                } else {
                    0
                };
                remaining -= extra;
                (0..1 + extra)
                    .map(|_| Sample {
                        domain: DomainTag::Source(d),
                        label: rng.random_range(0..classes),
                        x: (0..input)
                            .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        let hyper = AidgnHyper {
            kappa: rng.random_range(1.0..10.0),
            gamma_delta: rng.random_range(0.01..0.1),
            beta_rw: rng.random_range(0.0..1.0),
            eta: rng.random_range(0.0..0.5),
            mu_star: rng.random_range(0.5..5.0),
            margin: rng.random_range(0.0..0.5),
            stop_grad_radius: false,
        };
        Self {
            model: Model { extractor, head },
            batch,
            hyper,
            mode,
        }
    }

    fn grouped(&self) -> Vec<Vec<&Sample>> {
        self.batch.iter().map(|g| g.iter().collect()).collect()
    }

    /// Keeps perturbed true-class angles clear of the `π` clamp and cosines
    /// clear of `±1`, where the objective is not differentiable.
    pub fn away_from_kinks(&self) -> Result<bool> {
        let mut means = Vec::new();
        for group in &self.batch {
            let mut s = 0.0;
            for x in group {
                s += norm(&self.model.latent(&x.x)?);
            }
            means.push(s / group.len() as f64);
        }
        for (d, group) in self.batch.iter().enumerate() {
            for x in group {
                let z = self.model.latent(&x.x)?;
                let r = norm(&z);
                if r < 1e-3 {
                    return Ok(false);
                }
                if self.mode == LossMode::ErmLinear {
                    continue;
                }
                let scores = crate::loss::cosine_scores(&z, &self.model.head.rows)?;
                if scores.iter().any(|c| c.abs() > 0.999) {
                    return Ok(false);
                }
                let delta = self.hyper.gamma_delta * (r + self.hyper.beta_rw * means[d]);
                if scores[x.label].acos() + delta > PI - 0.05 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    pub fn model_level_error(&self) -> Result<f64> {
        let batch = self.grouped();
        let (base, grads) =
            objective_and_gradients(&self.model, &batch, &self.hyper, self.mode, true)?;
        let grads = grads.expect("gradients requested");
        let analytic: Vec<f64> = grads.params().concat();
        let mut probe = self.model.clone();
        let mut numeric = Vec::with_capacity(analytic.len());
        let groups = probe.param_shapes();
        for (gi, &len) in groups.iter().enumerate() {
            for k in 0..len {
                let orig = probe.params()[gi][k];
                let h = 1e-5 * orig.abs().max(1.0);
                probe.params_mut()[gi][k] = orig + h;
                let fp =
                    pinned_objective(&probe, &batch, &self.hyper, self.mode, &base.mu_d)?.total;
                probe.params_mut()[gi][k] = orig - h;
                let fm =
                    pinned_objective(&probe, &batch, &self.hyper, self.mode, &base.mu_d)?.total;
                probe.params_mut()[gi][k] = orig;
                numeric.push((fp - fm) / (2.0 * h));
            }
        }
        Ok(relative_error(&analytic, &numeric))
    }

    pub fn latent_level_error(&self) -> Result<f64> {
        use crate::loss::{
            aidgn_gradients, aidgn_objective_and_gradients, aidgn_objective_pinned, LatentSample,
        };
        let mut latents = Vec::new();
        for (d, group) in self.batch.iter().enumerate() {
            for s in group {
                latents.push(LatentSample {
                    domain: d,
                    latent: self.model.latent(&s.x)?,
                    label: s.label,
                });
            }
        }
        let head = self.model.head.rows.clone();
        let (base, _) = aidgn_objective_and_gradients(&latents, &head, &self.hyper, false)?;
        let pins = base.stats.mu_d.clone();
        let g = aidgn_gradients(&latents, &head, &self.hyper)?;
        let mut analytic: Vec<f64> = g.head.concat();
        analytic.extend(g.latents.concat());

        let f = |lat: &[LatentSample], hd: &[Vec<f64>]| -> Result<f64> {
            Ok(aidgn_objective_pinned(lat, hd, &self.hyper, &pins)?.total)
        };
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut hd = head.clone();
        for c in 0..hd.len() {
            for k in 0..hd[c].len() {
                let orig = hd[c][k];
                let h = 1e-6 * orig.abs().max(1.0);
                hd[c][k] = orig + h;
                let fp = f(&latents, &hd)?;
                hd[c][k] = orig - h;
                let fm = f(&latents, &hd)?;
                hd[c][k] = orig;
                numeric.push((fp - fm) / (2.0 * h));
            }
        }
        let mut lat = latents.clone();
        for i in 0..lat.len() {
            for k in 0..lat[i].latent.len() {
                let orig = lat[i].latent[k];
                let h = 1e-6 * orig.abs().max(1.0);
                lat[i].latent[k] = orig + h;
                let fp = f(&lat, &head)?;
                lat[i].latent[k] = orig - h;
                let fm = f(&lat, &head)?;
                lat[i].latent[k] = orig;
                numeric.push((fp - fm) / (2.0 * h));
            }
        }
        Ok(relative_error(&analytic, &numeric))
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute gap when both are tiny.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Inverse map on raw `(r, φ_1, ..., φ_{n-1})` without range checks, so
/// finite-difference probes may step outside the chart.
fn polar_coords_to_cartesian(c: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(c.len());
    let mut s = c[0];
    for &a in &c[1..] {
        z.push(s * a.cos());
        s *= a.sin();
    }
    z.push(s);
    z
}

/// Angles for `R^n` kept `margin` away from the chart boundaries.
fn random_interior_angles<R: Rng + ?Sized>(n: usize, margin: f64, rng: &mut R) -> Vec<f64> {
    let mut angles: Vec<f64> = (0..n - 2)
        .map(|_| rng.random_range(margin..PI - margin))
        .collect();
    angles.push(rng.random_range(margin..TAU - margin));
    angles
}

fn orthogonal_unit<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let raw = uniform_sphere_sample(w.len(), rng);
        let a = dot(&raw, w);
        let v: Vec<f64> = raw.iter().zip(w).map(|(r, x)| r - a * x).collect();
        let len = norm(&v);
        if len > 1e-3 {
            return v.into_iter().map(|x| x / len).collect();
        }
    }
}

/// `log |S^k|`, the surface area of the unit sphere in `R^{k+1}`.
fn log_sphere_area(k: usize) -> f64 {
    let h = (k as f64 + 1.0) / 2.0;
    std::f64::consts::LN_2 + h * PI.ln() - ln_gamma(h)
}

fn mean_and_standard_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let m = intervals + intervals % 2;
    let h = (b - a) / m as f64;
    let mut acc = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Tabulated CDF of the angle to the mean direction, density
/// `∝ sin^{n-2}θ e^{κ(cos θ - 1)}` on `[0, π]`, by trapezoid cumulative sums.
struct AngleCdf {
    step: f64,
    values: Vec<f64>,
}

impl AngleCdf {
    fn new(n: usize, kappa: f64, cells: usize) -> Self {
        let step = PI / cells as f64;
        let density = |t: f64| {
            let s = t.sin();
            let sp = if n == 2 { 1.0 } else { s.powi(n as i32 - 2) };
            sp * (kappa * (t.cos() - 1.0)).exp()
        };
        let mut values = Vec::with_capacity(cells + 1);
        values.push(0.0);
        let mut acc = 0.0;
        let mut prev = density(0.0);
        for i in 1..=cells {
            let cur = density(i as f64 * step);
            acc += 0.5 * (prev + cur) * step;
            values.push(acc);
            prev = cur;
        }
        let total = acc;
        values.iter_mut().for_each(|v| *v /= total);
        Self { step, values }
    }

    fn eval(&self, t: f64) -> f64 {
        let pos = (t / self.step).clamp(0.0, (self.values.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let frac = pos - i as f64;
        self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
    }
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let k = k as f64;
        let term = (-2.0 * k * k * lambda * lambda).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
