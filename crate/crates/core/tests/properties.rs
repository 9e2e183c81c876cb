//! Property tests for the invariants each module promises.

use aidgn::density_ratio::{ratio_exact, ratio_linear, target_posterior, RatioInputs};
use aidgn::distributions::{exponential_kl, mixture_posterior, NormLaws, VmfMixture, VmfParams};
use aidgn::loss::{
    aidgn_batch_objective, aidgn_sample_loss, cosine_scores, perturbed_cosine, AidgnHyper,
    LatentSample,
};
use aidgn::maxent::{
    objective_value, project_to_simplex, project_to_simplex_scaled, MaxEntInstance,
};
use aidgn::model::{ClassifierHead, HeadKind};
use aidgn::polar::{cartesian_to_polar, polar_log_abs_det_jacobian, polar_to_cartesian};
use aidgn::vecops::{argmax, norm, softmax};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vector(min_len: usize, max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, min_len..=max_len)
        .prop_filter("away from the origin and the chart poles", |v| {
            norm(v) > 1e-3 && v.iter().all(|x| x.abs() > 1e-6)
        })
}

fn unit(v: &[f64]) -> Vec<f64> {
    let r = norm(v);
    v.iter().map(|x| x / r).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn polar_round_trip(z in vector(2, 8), log_scale in -6.0f64..6.0) {
        let s = 10f64.powf(log_scale);
        let z: Vec<f64> = z.iter().map(|x| x * s).collect();
        let back = polar_to_cartesian(&cartesian_to_polar(&z).unwrap());
        let err = z.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / norm(&z);
        prop_assert!(err <= 1e-9, "relative error {err}");
    }

    #[test]
    fn polar_angles_ignore_scale(z in vector(2, 8), c in 1e-3f64..1e3) {
        let a = cartesian_to_polar(&z).unwrap();
        let scaled: Vec<f64> = z.iter().map(|x| x * c).collect();
        let b = cartesian_to_polar(&scaled).unwrap();
        for (x, y) in a.angles().iter().zip(b.angles()) {
            prop_assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn jacobian_scales_with_radius(z in vector(2, 6), c in 0.1f64..10.0) {
        let n = z.len();
        let p = cartesian_to_polar(&z).unwrap();
        let scaled: Vec<f64> = z.iter().map(|x| x * c).collect();
        let q = cartesian_to_polar(&scaled).unwrap();
        let diff = polar_log_abs_det_jacobian(&q, n).unwrap() - polar_log_abs_det_jacobian(&p, n).unwrap();
        prop_assert!((diff - (n as f64 - 1.0) * c.ln()).abs() < 1e-10);
    }

    #[test]
    fn exponential_kl_is_gibbs(mu_star in 1e-2f64..1e3, mu in 1e-2f64..1e3) {
        let kl = exponential_kl(mu_star, mu).unwrap();
        prop_assert!(kl >= 0.0);
        prop_assert_eq!(exponential_kl(mu_star, mu_star).unwrap(), 0.0);
        if (mu / mu_star - 1.0).abs() > 1e-3 {
            prop_assert!(kl > 0.0);
        }
    }

    #[test]
    fn mixture_posterior_is_a_simplex_vector(
        centers in prop::collection::vec(vector(3, 3), 2..6),
        z in vector(3, 3),
        kappa in 0.0f64..120.0,
        common in 1e-3f64..1e3,
    ) {
        let c = centers.len();
        let mixture = VmfMixture::uniform(centers.iter().map(|v| unit(v)).collect(), kappa).unwrap();
        let zs = unit(&z);
        let p = mixture_posterior(&zs, &mixture).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        // Independent oracle: common * P(y) exp(κ <w_y, z*>), normalized.
        let terms: Vec<f64> = mixture
            .components()
            .iter()
            .map(|w| common / c as f64 * (kappa * w.mean_direction().iter().zip(&zs).map(|(a, b)| a * b).sum::<f64>()).exp())
            .collect();
        let total: f64 = terms.iter().sum();
        for (a, t) in p.iter().zip(&terms) {
            prop_assert!((a - t / total).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_ratio_dominates_linear(r in 0.0f64..50.0, mu in 1e-2f64..20.0, width in 1e-2f64..20.0) {
        let inp = RatioInputs::new(r, mu, width).unwrap();
        let (e, l) = (ratio_exact(&inp), ratio_linear(&inp));
        prop_assert!(e >= l * (1.0 - 1e-15));
        if r == 0.0 {
            prop_assert_eq!(e, l);
        }
    }

    #[test]
    fn target_posterior_with_shared_mean_is_the_mixture_posterior(
        z in vector(4, 4),
        scale in 0.1f64..20.0,
        mu in 0.5f64..10.0,
    ) {
        let centers = vec![
            vec![1.0, 0.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
        ];
        let mixture = VmfMixture::uniform(centers, 20.0).unwrap();
        let norms = NormLaws::new(vec![mu], 10.0, 6.0).unwrap();
        let x: Vec<f64> = z.iter().map(|v| v * scale).collect();
        let t = target_posterior(&x, &mixture, &norms, 0, Some(&[mu; 3])).unwrap();
        let m = mixture_posterior(&unit(&x), &mixture).unwrap();
        for (a, b) in t.iter().zip(&m) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_loss_is_positive_and_monotone_in_the_perturbation(
        cosines in prop::collection::vec(-0.999f64..0.999, 2..8),
        y_seed in 0usize..100,
        r1 in 0.0f64..300.0,
        dr in 0.0f64..300.0,
        gamma_delta in 0.0f64..0.01,
        kappa in 1.0f64..120.0,
    ) {
        let y = y_seed % cosines.len();
        let hyper = AidgnHyper { kappa, gamma_delta, ..AidgnHyper::default() };
        let a = aidgn_sample_loss(&cosines, y, r1, 0.0, &hyper).unwrap();
        let b = aidgn_sample_loss(&cosines, y, r1 + dr, 0.0, &hyper).unwrap();
        // Strictly positive in exact arithmetic; it rounds to 0 once the
        // wrong-class mass drops below one ulp.
        prop_assert!(a >= 0.0);
        if cosines.iter().enumerate().any(|(c, &v)| c != y && kappa * (v - cosines[y]) > -30.0) {
            prop_assert!(a > 0.0);
        }
        prop_assert!(b >= a - 1e-12 * a.abs().max(1.0), "{a} then {b}");
    }

    #[test]
    fn sample_loss_vanishes_with_a_cosine_gap(
        others in prop::collection::vec(-1.0f64..0.5, 1..6),
        kappa in 2e4f64..1e5,
    ) {
        let mut cosines = vec![0.9];
        cosines.extend(others);
        let hyper = AidgnHyper { kappa, ..AidgnHyper::default() };
        let loss = aidgn_sample_loss(&cosines, 0, 1.0, 1.0, &hyper).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(loss < 1e-100, "loss {loss}");
    }

    #[test]
    fn perturbed_cosine_stays_in_range(c in -1.0f64..=1.0, delta in 0.0f64..4.0) {
        let v = perturbed_cosine(c, delta);
        prop_assert!((-1.0..=1.0).contains(&v));
        prop_assert!(v <= c.clamp(-1.0 + 1e-7, 1.0 - 1e-7) + 1e-15);
    }

    #[test]
    fn objective_ignores_batch_order(
        latents in prop::collection::vec(vector(3, 3), 2..8),
        eta in 0.0f64..0.1,
    ) {
        let head: Vec<Vec<f64>> = vec![unit(&[1.0, 0.2, 0.0]), unit(&[0.0, 1.0, 0.3]), unit(&[0.1, 0.0, 1.0])];
        let hyper = AidgnHyper { eta, ..AidgnHyper::default() };
        let batch: Vec<LatentSample> = latents
            .iter()
            .enumerate()
            .map(|(i, z)| LatentSample { domain: 0, latent: z.clone(), label: i % 3 })
            .collect();
        let whole = aidgn_batch_objective(&batch, &head, &hyper).unwrap();
        let mut reversed = batch.clone();
        reversed.reverse();
        let other = aidgn_batch_objective(&reversed, &head, &hyper).unwrap();
        prop_assert!((whole.total - other.total).abs() <= 1e-12 * whole.total.abs().max(1.0));
    }

    #[test]
    fn cosine_scores_ignore_latent_scale(z in vector(2, 6), c in 1e-4f64..1e4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = ClassifierHead::init(HeadKind::Cosine, 4, z.len(), &mut rng);
        let a = head.scores(&z).unwrap();
        let scaled: Vec<f64> = z.iter().map(|x| x * c).collect();
        let b = head.scores(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(x));
        }
        prop_assert_eq!(argmax(&a), argmax(&b));
        let direct = cosine_scores(&z, &head.rows).unwrap();
        prop_assert_eq!(a, direct);
    }

    #[test]
    fn projection_is_onto_the_simplex(v in prop::collection::vec(-5.0f64..5.0, 2..12)) {
        let p = project_to_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        // Idempotent, and no other simplex vertex is closer to v.
        let q = project_to_simplex(&p);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        let dist = |x: &[f64]| x.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        for k in 0..v.len() {
            let mut e = vec![0.0; v.len()];
            e[k] = 1.0;
            prop_assert!(dist(&p) <= dist(&e) + 1e-12);
        }
    }

    #[test]
    fn scaled_projection_is_onto_the_simplex(
        v in prop::collection::vec(-5.0f64..5.0, 2..12),
        d_seed in prop::collection::vec(1e-6f64..10.0, 12),
    ) {
        let d = &d_seed[..v.len()];
        let p = project_to_simplex_scaled(&v, d);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn maxent_objective_is_concave_on_the_simplex(
        scores in prop::collection::vec(-1.0f64..1.0, 2..10),
        kappa in 0.1f64..120.0,
        weights in prop::collection::vec(0.05f64..1.0, 10),
        dir in prop::collection::vec(-1.0f64..1.0, 10),
    ) {
        let c = scores.len();
        let inst = MaxEntInstance::new(scores.clone(), scores[0], kappa).unwrap();
        let total: f64 = weights[..c].iter().sum();
        let p: Vec<f64> = weights[..c].iter().map(|w| w / total).collect();
        let mean = dir[..c].iter().sum::<f64>() / c as f64;
        let v: Vec<f64> = dir[..c].iter().map(|x| x - mean).collect();
        prop_assume!(norm(&v) > 1e-3);
        let h = 1e-3 * p.iter().cloned().fold(f64::INFINITY, f64::min) / norm(&v);
        let at = |t: f64| -> f64 {
            let q: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            objective_value(&q, &inst).unwrap()
        };
        let second = at(h) - 2.0 * at(0.0) + at(-h);
        // Exact curvature is -Σ v²/p; compare to the second difference.
        let exact = -v.iter().zip(&p).map(|(a, b)| a * a / b).sum::<f64>() * h * h;
        prop_assert!(exact < 0.0);
        prop_assert!(second < 0.0, "second difference {second}");
        prop_assert!((second - exact).abs() <= 1e-3 * exact.abs() + 1e-13);
    }

    #[test]
    fn softmax_is_a_simplex_vector(logits in prop::collection::vec(-500.0f64..500.0, 1..12)) {
        let p = softmax(&logits);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(argmax(&p), argmax(&logits));
    }
}

#[test]
fn vmf_draws_are_unit_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for &n in &[2usize, 3, 5, 16] {
        let mut mu = vec![0.0; n];
        mu[n - 1] = 1.0;
        for &kappa in &[0.0, 1.0, 110.0] {
            let params = VmfParams::new(mu.clone(), kappa).unwrap();
            for _ in 0..200 {
                let z = aidgn::distributions::vmf_sample(&params, &mut rng);
                assert!((norm(&z) - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn regularizer_shares_the_kl_minimizer() {
    use aidgn::loss::{norm_regularizer, norm_regularizer_exact_kl};
    for &mu_star in &[0.5, 4.0, 410.0] {
        let hyper = AidgnHyper {
            mu_star,
            eta: 1.0,
            ..AidgnHyper::default()
        };
        let kl = |m: f64| norm_regularizer_exact_kl(m, &hyper).unwrap();
        let form = |m: f64| norm_regularizer(m, &hyper);
        let h = 1e-3 * mu_star;
        for m in [mu_star - h, mu_star + h, 0.5 * mu_star, 2.0 * mu_star] {
            assert!(kl(m) > kl(mu_star));
            assert!(form(m) > form(mu_star));
        }
        let second =
            |f: &dyn Fn(f64) -> f64| (f(mu_star + h) - 2.0 * f(mu_star) + f(mu_star - h)) / (h * h);
        let (k2, f2) = (second(&kl), second(&form));
        assert!(
            (k2 * mu_star * mu_star - 1.0).abs() < 1e-5,
            "KL curvature {k2}"
        );
        // The expanded form is twice as curved as the KL it stands in for.
        assert!((f2 / k2 - 2.0).abs() < 1e-5, "curvature ratio {}", f2 / k2);
    }
}
