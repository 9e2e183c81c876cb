//! Run configuration, dataset files, training runs and paired comparisons.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loss::AidgnHyper;
use crate::model::checkpoint::write_checkpoint;
use crate::model::{
    evaluate, train, EvalReport, LossMode, MetricsRecord, Model, ModelConfig, TrainConfig,
};
use crate::synth::{generate, Dataset, DomainTag, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub mode: LossMode,
    pub kappa: f64,
    pub gamma_delta: f64,
    pub beta_rw: f64,
    pub eta: f64,
    pub mu_star: f64,
    pub margin: f64,
    pub stop_grad_radius: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        let h = AidgnHyper::default();
        Self {
            mode: LossMode::Aidgn,
            kappa: h.kappa,
            gamma_delta: h.gamma_delta,
            beta_rw: h.beta_rw,
            eta: h.eta,
            mu_star: h.mu_star,
            margin: h.margin,
            stop_grad_radius: h.stop_grad_radius,
        }
    }
}

impl LossConfig {
    pub fn hyper(&self) -> AidgnHyper {
        AidgnHyper {
            kappa: self.kappa,
            gamma_delta: self.gamma_delta,
            beta_rw: self.beta_rw,
            eta: self.eta,
            mu_star: self.mu_star,
            margin: self.margin,
            stop_grad_radius: self.stop_grad_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// Where dataset files live; `<out_dir>/data` when unset.
    pub data_dir: Option<PathBuf>,
    pub eval_interval: u64,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs"),
            data_dir: None,
            eval_interval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub io: IoConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.train.eval_interval = cfg.io.eval_interval;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.loss.hyper().validate()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.io
            .data_dir
            .clone()
            .unwrap_or_else(|| self.io.out_dir.join("data"))
    }

    /// The same configuration with both the task and the training seed set
    /// to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut cfg = self.clone();
        cfg.task.seed = seed;
        cfg.train.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub domain: i64,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub latent_dim: usize,
    pub classes: usize,
    pub files: Vec<ManifestEntry>,
    /// Digest over the per-file digests in file order.
    pub data_checksum: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_name(which: DomainTag) -> String {
    match which {
        DomainTag::Source(d) => format!("source_{d}.csv"),
        DomainTag::Target => "target.csv".to_string(),
    }
}

fn combined_checksum(files: &[ManifestEntry]) -> String {
    let mut h = Sha256::new();
    for f in files {
        h.update(f.sha256.as_bytes());
    }
    hex::encode(h.finalize())
}

/// Generates every domain of `spec` and writes one file per domain plus the
/// manifest into `dir`.
pub fn write_dataset_files(spec: &SyntheticSpec, dir: &Path) -> Result<Manifest> {
    let data = generate(spec)?;
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let domains = data
        .sources
        .iter()
        .enumerate()
        .map(|(d, s)| (DomainTag::Source(d), s))
        .chain(std::iter::once((DomainTag::Target, &data.target)));
    for (which, dataset) in domains {
        let mut bytes = Vec::new();
        dataset.write_to(&mut bytes)?;
        let name = file_name(which);
        fs::write(dir.join(&name), &bytes)?;
        files.push(ManifestEntry {
            file: name,
            domain: which.as_i64(),
            rows: dataset.len(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        seed: spec.seed,
        latent_dim: spec.latent_dim,
        classes: spec.classes,
        data_checksum: combined_checksum(&files),
        files,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub manifest: Manifest,
    pub sources: Vec<Dataset>,
    pub target: Dataset,
}

/// Reads a dataset directory and checks every file against its manifest
/// digest.
pub fn load_dataset_files(dir: &Path) -> Result<LoadedData> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| {
        Error::Config(format!(
            "no dataset manifest at {} ({e}); run `aidgn gen` first",
            manifest_path.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut sources = Vec::new();
    let mut target = None;
    for entry in &manifest.files {
        let bytes = fs::read(dir.join(&entry.file))?;
        if sha256_hex(&bytes) != entry.sha256 {
            return Err(Error::DatasetFormat(format!(
                "checksum mismatch for {}",
                entry.file
            )));
        }
        let data = Dataset::read_from(bytes.as_slice())?;
        match DomainTag::from_i64(entry.domain)? {
            DomainTag::Source(d) if d == sources.len() => sources.push(data),
            DomainTag::Source(d) => {
                return Err(Error::DatasetFormat(format!(
                    "source file {d} out of order"
                )));
            }
            DomainTag::Target => target = Some(data),
        }
    }
    let target =
        target.ok_or_else(|| Error::DatasetFormat("manifest lists no target file".into()))?;
    if manifest.data_checksum != combined_checksum(&manifest.files) {
        return Err(Error::DatasetFormat("manifest checksum mismatch".into()));
    }
    Ok(LoadedData {
        manifest,
        sources,
        target,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: LossMode,
    pub seed: u64,
    pub iterations: u64,
    pub selected_step: Option<u64>,
    pub validation_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    pub mean_entropy: Option<f64>,
    pub final_target_accuracy: Option<f64>,
    pub data_checksum: String,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";

/// Splits each source domain into train and validation parts by class.
/// The split draws from stream 1 of the training seed; training itself
/// uses stream 0.
pub fn split_sources(
    sources: &[Dataset],
    config: &TrainConfig,
) -> Result<(Vec<Dataset>, Option<Dataset>)> {
    if config.validation_fraction == 0.0 {
        return Ok((sources.to_vec(), None));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut train_parts = Vec::with_capacity(sources.len());
    let mut held = Vec::new();
    for (d, s) in sources.iter().enumerate() {
        let (a, b) = s.stratified_split(config.validation_fraction, &mut rng)?;
        if a.is_empty() {
            return Err(Error::EmptyDomain(d));
        }
        train_parts.push(a);
        held.extend(b.samples().iter().cloned());
    }
    let dim = sources.first().map_or(1, |s| s.dim());
    Ok((train_parts, Some(Dataset::new(dim, held)?)))
}

/// Trains one arm and writes its metrics, final checkpoint and summary into
/// `out_dir`.
pub fn run_training(
    cfg: &RunConfig,
    data: &LoadedData,
    mode: LossMode,
    out_dir: &Path,
) -> Result<RunSummary> {
    let (train_parts, validation) = split_sources(&data.sources, &cfg.train)?;
    let hyper = cfg.loss.hyper();
    let outcome = train(
        &train_parts,
        validation.as_ref(),
        Some(&data.target),
        &cfg.model,
        &cfg.train,
        &hyper,
        mode,
    )?;
    fs::create_dir_all(out_dir)?;
    write_metrics(&outcome.history, &out_dir.join(METRICS_FILE))?;
    write_checkpoint(&outcome.state, &out_dir.join(CHECKPOINT_FILE))?;
    let selected = outcome.selected.map(|i| &outcome.history[i]);
    let summary = RunSummary {
        mode,
        seed: cfg.train.seed,
        iterations: cfg.train.iterations,
        selected_step: selected.map(|r| r.step),
        validation_accuracy: selected.and_then(|r| r.validation_accuracy),
        target_accuracy: selected.and_then(|r| r.target_accuracy),
        mean_entropy: selected.and_then(|r| r.mean_entropy),
        final_target_accuracy: outcome.history.last().and_then(|r| r.target_accuracy),
        data_checksum: data.manifest.data_checksum.clone(),
    };
    fs::write(
        out_dir.join(SUMMARY_FILE),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

pub fn write_metrics(history: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in history {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainEval {
    pub file: String,
    pub domain: i64,
    pub accuracy: f64,
    pub mean_entropy: f64,
}

pub fn evaluate_all(model: &Model, data: &LoadedData, kappa: f64) -> Result<Vec<DomainEval>> {
    let mut out = Vec::new();
    let sets = data
        .sources
        .iter()
        .enumerate()
        .map(|(d, s)| (DomainTag::Source(d), s))
        .chain(std::iter::once((DomainTag::Target, &data.target)));
    for (which, set) in sets {
        let EvalReport {
            accuracy,
            mean_entropy,
        } = evaluate(model, set, kappa)?;
        out.push(DomainEval {
            file: file_name(which),
            domain: which.as_i64(),
            accuracy,
            mean_entropy,
        });
    }
    Ok(out)
}

/// Arms of a paired comparison: the configured loss, and the cosine-softmax
/// baseline it reduces to without perturbation and regularizer.
pub const ARMS: [(&str, LossMode); 2] = [("aidgn", LossMode::Aidgn), ("erm", LossMode::ErmCosine)];

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub seed: u64,
    pub arm: &'static str,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    pub arm: &'static str,
    pub validation_accuracy: (f64, f64),
    pub target_accuracy: (f64, f64),
    pub mean_entropy: (f64, f64),
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub runs: Vec<ArmResult>,
    pub stats: Vec<ArmStats>,
    /// Seeds where the first arm's target accuracy is at least the second's.
    pub wins_or_ties: usize,
}

pub const COMPARE_HEADER: [&str; 11] = [
    "kind",
    "seed",
    "arm",
    "validation_accuracy",
    "target_accuracy",
    "mean_entropy",
    "validation_accuracy_std",
    "target_accuracy_std",
    "mean_entropy_std",
    "count",
    "data_checksum",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every arm on every seed over shared per-seed data and writes the
/// comparison CSV, flushing after each run. Per-run outputs go under
/// `runs_root/seed_<s>/<arm>`, the data under `runs_root/seed_<s>/data`.
pub fn run_compare(
    cfg: &RunConfig,
    seeds: &[u64],
    csv_path: &Path,
    runs_root: &Path,
) -> Result<CompareReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("seeds", "need at least one seed"));
    }
    if let Some(parent) = csv_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut csv = csv::Writer::from_path(csv_path)?;
    csv.write_record(COMPARE_HEADER)?;
    csv.flush()?;

    let mut runs = Vec::new();
    for &seed in seeds {
        let seeded = cfg.with_seed(seed);
        let seed_dir = runs_root.join(format!("seed_{seed}"));
        write_dataset_files(&seeded.task, &seed_dir.join("data"))?;
        let data = load_dataset_files(&seed_dir.join("data"))?;
        for (arm, mode) in ARMS {
            let summary = run_training(&seeded, &data, mode, &seed_dir.join(arm))?;
            csv.write_record([
                "run".to_string(),
                seed.to_string(),
                arm.to_string(),
                opt(summary.validation_accuracy),
                opt(summary.target_accuracy),
                opt(summary.mean_entropy),
                String::new(),
                String::new(),
                String::new(),
                "1".to_string(),
                summary.data_checksum.clone(),
            ])?;
            csv.flush()?;
            runs.push(ArmResult { seed, arm, summary });
        }
    }

    let mut stats = Vec::new();
    for (arm, _) in ARMS {
        let of = |f: fn(&RunSummary) -> Option<f64>| -> Vec<f64> {
            runs.iter()
                .filter(|r| r.arm == arm)
                .filter_map(|r| f(&r.summary))
                .collect()
        };
        let s = ArmStats {
            arm,
            validation_accuracy: mean_std(&of(|s| s.validation_accuracy)),
            target_accuracy: mean_std(&of(|s| s.target_accuracy)),
            mean_entropy: mean_std(&of(|s| s.mean_entropy)),
            count: runs.iter().filter(|r| r.arm == arm).count(),
        };
        csv.write_record([
            "summary".to_string(),
            String::new(),
            arm.to_string(),
            s.validation_accuracy.0.to_string(),
            s.target_accuracy.0.to_string(),
            s.mean_entropy.0.to_string(),
            s.validation_accuracy.1.to_string(),
            s.target_accuracy.1.to_string(),
            s.mean_entropy.1.to_string(),
            s.count.to_string(),
            String::new(),
        ])?;
        stats.push(s);
    }

    let (first, second) = (ARMS[0].0, ARMS[1].0);
    let target_of = |seed: u64, arm: &str| {
        runs.iter()
            .find(|r| r.seed == seed && r.arm == arm)
            .and_then(|r| r.summary.target_accuracy)
    };
    let wins_or_ties = seeds
        .iter()
        .filter(|&&s| matches!((target_of(s, first), target_of(s, second)), (Some(a), Some(b)) if a >= b))
        .count();
    csv.write_record([
        "win_count".to_string(),
        String::new(),
        format!("{first}>={second}"),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        wins_or_ties.to_string(),
        String::new(),
    ])?;
    csv.flush()?;
    drop(csv);

    Ok(CompareReport {
        runs,
        stats,
        wins_or_ties,
    })
}

/// Parses a comma-separated seed list such as `0,1,2`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::invalid("seeds", format!("not a seed: {s:?}")))
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::invalid("seeds", "empty list"))
            } else {
                Ok(v)
            }
        })
}

/// Writes a human-readable block for the manifest to `out`.
pub fn print_manifest<W: Write>(manifest: &Manifest, out: &mut W) -> Result<()> {
    writeln!(
        out,
        "seed {}  dim {}  classes {}",
        manifest.seed, manifest.latent_dim, manifest.classes
    )?;
    for f in &manifest.files {
        writeln!(
            out,
            "{:<14} domain {:>2}  rows {:>6}  sha256 {}",
            f.file, f.domain, f.rows, f.sha256
        )?;
    }
    writeln!(out, "data checksum {}", manifest.data_checksum)?;
    Ok(())
}
