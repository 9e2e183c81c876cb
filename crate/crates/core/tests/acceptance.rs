//! Acceptance criteria 1 to 9. Each test writes one PASS/FAIL line to the
//! uncaptured stderr, then asserts.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use aidgn::bench::{run_compare, CompareReport, Manifest, RunConfig, METRICS_FILE, SUMMARY_FILE};
use aidgn::loss::{aidgn_batch_objective, aidgn_sample_loss, AidgnHyper, LatentSample};
use aidgn::maxent::{closed_form_distribution, objective_value, solve_numeric, MaxEntInstance};
use aidgn::model::{train_step, LossMode, ModelConfig, TrainConfig, TrainState};
use aidgn::synth::{generate, Sample, SyntheticSpec, ViolationKind};
use aidgn::verify::{CheckResult, Verifier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "criterion {criterion}: {verdict}  {detail}"
    );
}

fn checks_line(checks: &[CheckResult]) -> String {
    checks
        .iter()
        .map(|c| format!("{}={:.3e}", c.name, c.measured))
        .collect::<Vec<_>>()
        .join(", ")
}

#[test]
fn criterion_1_maxent_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_gap, mut worst_value) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let c = rng.random_range(2..=10);
        let kappa = 120.0 * (1.0 - rng.random::<f64>());
        let scores: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let y = rng.random_range(0..c);
        let inst = MaxEntInstance::new(scores.clone(), scores[y], kappa).unwrap();
        let p = solve_numeric(&inst, 1e-10).unwrap();
        let q = closed_form_distribution(&inst);
        let gap = p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let hyper = AidgnHyper {
            kappa,
            gamma_delta: 0.0,
            ..AidgnHyper::default()
        };
        let loss = aidgn_sample_loss(&scores, y, 1.0, 1.0, &hyper).unwrap();
        let value = (objective_value(&p, &inst).unwrap() - loss).abs();
        worst_gap = worst_gap.max(gap);
        worst_value = worst_value.max(value);
    }
    let elapsed = started.elapsed();
    let pass = worst_gap <= 1e-6 && worst_value <= 1e-9 && elapsed < Duration::from_secs(60);
    report(
        "1",
        pass,
        &format!("sup-norm {worst_gap:.3e} <= 1e-6, |objective - loss| {worst_value:.3e} <= 1e-9, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_gradients() {
    let started = Instant::now();
    let v = Verifier::default();
    let checks = [
        v.model_gradient_fd(50).unwrap(),
        v.loss_gradient_fd(50).unwrap(),
    ];
    let elapsed = started.elapsed();
    let pass = checks.iter().all(|c| c.passed() && c.tolerance <= 1e-5)
        && elapsed < Duration::from_secs(60);
    report(
        "2",
        pass,
        &format!("{}, {elapsed:.2?}", checks_line(&checks)),
    );
    assert!(pass);
}

#[test]
fn criterion_3_polar_geometry() {
    let v = Verifier::default();
    let checks = [
        v.polar_round_trip(1000).unwrap(),
        v.polar_jacobian(200).unwrap(),
    ];
    let pass = checks[0].passed()
        && checks[0].tolerance <= 1e-9
        && checks[1].passed()
        && checks[1].tolerance <= 1e-4;
    report("3", pass, &checks_line(&checks));
    assert!(pass);
}

#[test]
fn criterion_4_density_ratio_identity() {
    let check = Verifier::default().density_ratio_identity(100).unwrap();
    let pass = check.passed() && check.tolerance <= 1e-10;
    report("4", pass, &checks_line(std::slice::from_ref(&check)));
    assert!(pass);
}

#[test]
fn criterion_5_distributions() {
    let v = Verifier::default();
    let checks = [
        v.exponential_kl_quadrature(100).unwrap(),
        v.vmf_normalization(100_000).unwrap(),
        v.vmf_mean_resultant(20_000).unwrap(),
    ];
    let pass = checks[0].passed()
        && checks[0].tolerance <= 1e-6
        && checks[1..].iter().all(|c| c.passed() && c.tolerance <= 3.0);
    report("5", pass, &checks_line(&checks));
    assert!(pass);
}

#[test]
fn criterion_6a_unperturbed_run_is_erm() {
    let spec = SyntheticSpec {
        samples_per_class: 40,
        ..SyntheticSpec::default()
    };
    let data = generate(&spec).unwrap();
    let model_cfg = ModelConfig::default();
    let config = TrainConfig {
        iterations: 300,
        ..TrainConfig::default()
    };
    let hyper = AidgnHyper::default();
    let reduced = hyper.erm_reduction();
    let mut aidgn = TrainState::new(
        spec.latent_dim,
        spec.classes,
        &model_cfg,
        LossMode::Aidgn,
        3,
    )
    .unwrap();
    let mut erm = TrainState::new(
        spec.latent_dim,
        spec.classes,
        &model_cfg,
        LossMode::ErmCosine,
        3,
    )
    .unwrap();
    let mut batch_rng = ChaCha8Rng::seed_from_u64(4);
    let mut identical = aidgn == erm;
    for _ in 0..config.iterations {
        let batch: Vec<Vec<&Sample>> = data
            .sources
            .iter()
            .map(|d| {
                (0..config.batch_per_domain)
                    .map(|_| &d.samples()[batch_rng.random_range(0..d.len())])
                    .collect()
            })
            .collect();
        let a = train_step(&mut aidgn, &batch, &reduced, &config, LossMode::Aidgn).unwrap();
        let b = train_step(&mut erm, &batch, &hyper, &config, LossMode::ErmCosine).unwrap();
        identical &= a == b && aidgn.model == erm.model && aidgn.optimizer == erm.optimizer;
    }
    report(
        "6a",
        identical,
        &format!(
            "{} steps, states and records bitwise equal: {identical}",
            config.iterations
        ),
    );
    assert!(identical);
}

/// The single-domain objective written out directly as a magnitude-aware
/// margin softmax plus the norm regularizer.
fn mag_form(batch: &[(Vec<f64>, usize)], head: &[Vec<f64>], h: &AidgnHyper) -> f64 {
    let eps = 1e-7;
    let radii: Vec<f64> = batch
        .iter()
        .map(|(z, _)| z.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mu = radii.iter().sum::<f64>() / radii.len() as f64;
    let mut total = 0.0;
    for ((z, y), &r) in batch.iter().zip(&radii) {
        let angle = |w: &Vec<f64>| {
            let cos = w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() / r;
            cos.clamp(-1.0 + eps, 1.0 - eps).acos()
        };
        let margin = h.gamma_delta * (r + h.beta_rw * mu);
        let target = (angle(&head[*y]) + margin).min(std::f64::consts::PI).cos();
        let mut denominator = (h.kappa * target).exp();
        for (c, w) in head.iter().enumerate() {
            if c != *y {
                let wrong = (angle(w) + h.gamma_delta * h.margin)
                    .min(std::f64::consts::PI)
                    .cos();
                denominator += (h.kappa * wrong).exp();
            }
        }
        total += -((h.kappa * target).exp() / denominator).ln();
        total += h.eta * (mu / h.mu_star + h.mu_star / mu);
    }
    total
}

#[test]
fn criterion_6b_single_domain_is_the_mag_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let classes = rng.random_range(2..=6);
        let size = rng.random_range(1..=12);
        let hyper = AidgnHyper {
            kappa: rng.random_range(1.0..120.0),
            gamma_delta: rng.random_range(0.0..0.01),
            beta_rw: rng.random_range(0.0..0.5),
            eta: rng.random_range(0.0..0.1),
            mu_star: rng.random_range(1.0..500.0),
            margin: if rng.random_bool(0.5) {
                0.0
            } else {
                rng.random_range(0.0..0.5)
            },
            stop_grad_radius: false,
        };
        let head: Vec<Vec<f64>> = (0..classes)
            .map(|_| {
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                w.iter().map(|x| x / r).collect()
            })
            .collect();
        let batch: Vec<(Vec<f64>, usize)> = (0..size)
            .map(|_| {
                let scale = rng.random_range(0.1..50.0);
                let z = (0..n)
                    .map(|_| scale * rng.random_range(-1.0..1.0))
                    .collect();
                (z, rng.random_range(0..classes))
            })
            .collect();
        let samples: Vec<LatentSample> = batch
            .iter()
            .map(|(z, y)| LatentSample {
                domain: 0,
                latent: z.clone(),
                label: *y,
            })
            .collect();
        let ours = aidgn_batch_objective(&samples, &head, &hyper)
            .unwrap()
            .total;
        worst = worst.max((ours - mag_form(&batch, &head, &hyper)).abs());
    }
    let pass = worst <= 1e-12;
    report(
        "6b",
        pass,
        &format!("max |objective - MAG form| {worst:.3e} <= 1e-12 over 1000 batches"),
    );
    assert!(pass);
}

/// Bytes of every per-run metrics and summary file plus the comparison CSV,
/// keyed by path relative to the run root.
struct CompareRun {
    report: CompareReport,
    files: BTreeMap<String, Vec<u8>>,
    manifests: BTreeMap<u64, Manifest>,
    elapsed: Duration,
}

fn compare_run(violation: ViolationKind) -> CompareRun {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.task.violation = violation;
    cfg.io.out_dir = dir.path().to_path_buf();
    let csv_path = dir.path().join("compare.csv");
    let root = dir.path().join("runs");
    let started = Instant::now();
    let report = run_compare(&cfg, &SEEDS, &csv_path, &root).unwrap();
    let elapsed = started.elapsed();
    let mut files = BTreeMap::new();
    files.insert("compare.csv".to_string(), fs::read(&csv_path).unwrap());
    let mut manifests = BTreeMap::new();
    for seed in SEEDS {
        for arm in ["aidgn", "erm"] {
            for file in [METRICS_FILE, SUMMARY_FILE] {
                let rel = format!("seed_{seed}/{arm}/{file}");
                files.insert(rel.clone(), fs::read(root.join(&rel)).unwrap());
            }
        }
        let data = root.join(format!("seed_{seed}/data"));
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(data.join("manifest.json")).unwrap()).unwrap();
        assert!(
            manifest_matches_files(&manifest, &data),
            "seed {seed}: manifest does not match its files"
        );
        manifests.insert(seed, manifest);
    }
    CompareRun {
        report,
        files,
        manifests,
        elapsed,
    }
}

fn manifest_matches_files(manifest: &Manifest, dir: &Path) -> bool {
    manifest.files.iter().all(|entry| {
        let bytes = fs::read(dir.join(&entry.file)).unwrap();
        let rows = bytes.iter().filter(|&&b| b == b'\n').count() - 1;
        hex::encode(Sha256::digest(&bytes)) == entry.sha256 && rows == entry.rows
    })
}

fn default_compare() -> &'static CompareRun {
    static RUN: OnceLock<CompareRun> = OnceLock::new();
    RUN.get_or_init(|| compare_run(ViolationKind::None))
}

#[test]
fn criterion_7_norm_shift_comparison() {
    let run = default_compare();
    let stats = |arm: &str| run.report.stats.iter().find(|s| s.arm == arm).unwrap();
    let (a, e) = (stats("aidgn"), stats("erm"));
    let min_val = |arm: &str| {
        run.report
            .runs
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.summary.validation_accuracy)
            .fold(f64::INFINITY, f64::min)
    };
    let validation = a.validation_accuracy.0 >= 0.95 && e.validation_accuracy.0 >= 0.95;
    let accuracy = a.target_accuracy.0 >= e.target_accuracy.0;
    let wins = run.report.wins_or_ties >= 6;
    let entropy = a.mean_entropy.0 <= e.mean_entropy.0;
    let runtime = run.elapsed < Duration::from_secs(600);
    let pass = validation && accuracy && wins && entropy && runtime;
    report(
        "7",
        pass,
        &format!(
            "validation aidgn {:.4} (min {:.4}) erm {:.4} (min {:.4}); target aidgn {:.4}±{:.4} erm {:.4}±{:.4}; \
             wins or ties {}/10; entropy aidgn {:.4} erm {:.4}; {:.1?}",
            a.validation_accuracy.0,
            min_val("aidgn"),
            e.validation_accuracy.0,
            min_val("erm"),
            a.target_accuracy.0,
            a.target_accuracy.1,
            e.target_accuracy.0,
            e.target_accuracy.1,
            run.report.wins_or_ties,
            a.mean_entropy.0,
            e.mean_entropy.0,
            run.elapsed,
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_angular_shift_control() {
    let shifted = compare_run(ViolationKind::AngularShift);
    let clean = default_compare();
    let csv = String::from_utf8(shifted.files["compare.csv"].clone()).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let count = |kind: &str| rows.iter().filter(|r| &r[0] == kind).count();
    let layout = count("run") == 20 && count("summary") == 2 && count("win_count") == 1;

    let mut paired = true;
    let mut sources_shared = true;
    let mut target_moved = true;
    for seed in SEEDS {
        let manifest = &shifted.manifests[&seed];
        let sums: Vec<&str> = rows
            .iter()
            .filter(|r| &r[0] == "run" && r[1] == *seed.to_string())
            .map(|r| r.get(10).unwrap())
            .collect();
        paired &= sums.len() == 2 && sums.iter().all(|s| *s == manifest.data_checksum);
        let clean_manifest = &clean.manifests[&seed];
        for (a, b) in manifest.files.iter().zip(&clean_manifest.files) {
            if a.domain >= 0 {
                sources_shared &= a.sha256 == b.sha256;
            } else {
                target_moved &= a.sha256 != b.sha256;
            }
        }
    }
    let finite = shifted
        .report
        .runs
        .iter()
        .all(|r| r.summary.target_accuracy.is_some_and(f64::is_finite));
    let pass = layout && paired && sources_shared && target_moved && finite;
    let stats = |arm: &str| {
        shifted
            .report
            .stats
            .iter()
            .find(|s| s.arm == arm)
            .unwrap()
            .target_accuracy
            .0
    };
    report(
        "8",
        pass,
        &format!(
            "rows ok {layout}, paired checksums {paired}, sources unchanged {sources_shared}, target shifted {target_moved}; \
             target aidgn {:.4} erm {:.4} (not judged); {:.1?}",
            stats("aidgn"),
            stats("erm"),
            shifted.elapsed,
        ),
    );
    assert!(pass);
}

/// Drops every `"wall_clock_s":<number>` field from a line-delimited record
/// file.
fn strip_wall_clock(bytes: &[u8]) -> String {
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let key = "\"wall_clock_s\":";
    let mut out = String::with_capacity(text.len());
    let mut rest = text.as_str();
    while let Some(i) = rest.find(key) {
        out.push_str(&rest[..i]);
        let tail = &rest[i + key.len()..];
        let end = tail.find([',', '}']).unwrap_or(tail.len());
        rest = &tail[end..];
    }
    out.push_str(rest);
    out
}

#[test]
fn criterion_9_determinism() {
    let first = default_compare();
    let second = compare_run(ViolationKind::None);
    let mut differing = Vec::new();
    for (name, bytes) in &first.files {
        let other = &second.files[name];
        if strip_wall_clock(bytes) != strip_wall_clock(other) {
            differing.push(name.clone());
        }
    }
    let same_keys = first.files.keys().eq(second.files.keys());
    let pass = differing.is_empty() && same_keys && first.files.len() == 41;
    report(
        "9",
        pass,
        &format!(
            "{} files compared (metrics, summaries, csv), {} differ {:?}",
            first.files.len(),
            differing.len(),
            differing
        ),
    );
    assert!(pass);
}
