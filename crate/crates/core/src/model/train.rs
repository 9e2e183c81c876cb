use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, Adam, ForwardTrace, HeadKind, Model};
use crate::error::{Error, Result};
use crate::loss::{
    aidgn_objective_and_gradients, aidgn_objective_pinned, batch_norm_means,
    linear_softmax_objective, AidgnHyper, LatentSample,
};
use crate::synth::{Dataset, Sample};
use crate::vecops::{argmax, entropy, softmax};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    #[default]
    Aidgn,
    /// Cosine head with the perturbation and regularizer switched off.
    ErmCosine,
    /// Unnormalized linear head with plain cross-entropy.
    ErmLinear,
}

impl LossMode {
    pub fn head_kind(self) -> HeadKind {
        match self {
            LossMode::Aidgn | LossMode::ErmCosine => HeadKind::Cosine,
            LossMode::ErmLinear => HeadKind::Linear,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Aidgn => "aidgn",
            LossMode::ErmCosine => "erm_cosine",
            LossMode::ErmLinear => "erm_linear",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            latent_dim: 16,
            activation: Activation::Softplus,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::invalid("model.latent_dim", "must be >= 2"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::invalid("model.hidden", "widths must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: u64,
    pub batch_per_domain: usize,
    pub seed: u64,
    /// Share of each source domain held out for model selection.
    pub validation_fraction: f64,
    #[serde(skip)]
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            iterations: 2000,
            batch_per_domain: 32,
            seed: 0,
            validation_fraction: 0.2,
            eval_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("train.learning_rate", "must be > 0"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("train.iterations", "must be > 0"));
        }
        if self.batch_per_domain == 0 {
            return Err(Error::invalid("train.batch_per_domain", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid(
                "train.validation_fraction",
                "must be in [0, 1)",
            ));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("io.eval_interval", "must be > 0"));
        }
        Ok(())
    }
}

/// Learning rate for the update that follows `completed` steps: halved once
/// at 40% and again at 80% of the run.
pub fn learning_rate_at(config: &TrainConfig, completed: u64) -> f64 {
    let first = (config.iterations as f64 * 0.4).round() as u64;
    let second = (config.iterations as f64 * 0.8).round() as u64;
    let mut lr = config.learning_rate;
    if completed >= first {
        lr *= 0.5;
    }
    if completed >= second {
        lr *= 0.5;
    }
    lr
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Adam,
    pub step: u64,
    pub seed: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Seeds one stream that drives initialization and then batch sampling.
    pub fn new(
        input_dim: usize,
        classes: usize,
        model: &ModelConfig,
        mode: LossMode,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::init(input_dim, model, mode.head_kind(), classes, &mut rng)?;
        let optimizer = Adam::new(&model.param_shapes());
        Ok(Self {
            model,
            optimizer,
            step: 0,
            seed,
            rng,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    /// Mean per-sample loss over the batch.
    pub train_loss: f64,
    /// Mean per-sample regularizer over the batch.
    pub regularizer: f64,
    pub mu_d: Vec<f64>,
    pub validation_accuracy: Option<f64>,
    pub target_accuracy: Option<f64>,
    /// Mean prediction entropy on the target set.
    pub mean_entropy: Option<f64>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepObjective {
    pub total: f64,
    pub loss_sum: f64,
    pub regularizer_sum: f64,
    pub mu_d: Vec<f64>,
}

/// Full objective of one batch as a function of every model parameter, with
/// gradients in a [`Model`]-shaped buffer. `batch[d]` holds domain `d`.
pub fn objective_and_gradients(
    model: &Model,
    batch: &[Vec<&Sample>],
    hyper: &AidgnHyper,
    mode: LossMode,
    with_gradients: bool,
) -> Result<(StepObjective, Option<Model>)> {
    objective_impl(model, batch, hyper, mode, with_gradients, None)
}

/// Objective value with the perturbation's domain means pinned, the
/// quantity whose finite differences the analytic gradients match.
pub fn pinned_objective(
    model: &Model,
    batch: &[Vec<&Sample>],
    hyper: &AidgnHyper,
    mode: LossMode,
    perturbation_means: &[f64],
) -> Result<StepObjective> {
    objective_impl(model, batch, hyper, mode, false, Some(perturbation_means)).map(|(o, _)| o)
}

fn objective_impl(
    model: &Model,
    batch: &[Vec<&Sample>],
    hyper: &AidgnHyper,
    mode: LossMode,
    with_gradients: bool,
    pinned: Option<&[f64]>,
) -> Result<(StepObjective, Option<Model>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut traces: Vec<ForwardTrace> = Vec::new();
    let mut latents = Vec::new();
    for (d, group) in batch.iter().enumerate() {
        if group.is_empty() {
            return Err(Error::EmptyDomain(d));
        }
        for s in group {
            let trace = model.extractor.forward_traced(&s.x)?;
            latents.push(LatentSample {
                domain: d,
                latent: trace.latent().to_vec(),
                label: s.label,
            });
            traces.push(trace);
        }
    }

    let (objective, grads) = match mode {
        LossMode::Aidgn | LossMode::ErmCosine => {
            let h = if mode == LossMode::ErmCosine {
                hyper.erm_reduction()
            } else {
                *hyper
            };
            let (o, g) = match pinned {
                Some(p) => (
                    aidgn_objective_pinned(&latents, &model.head.rows, &h, p)?,
                    None,
                ),
                None => {
                    aidgn_objective_and_gradients(&latents, &model.head.rows, &h, with_gradients)?
                }
            };
            (
                StepObjective {
                    total: o.total,
                    loss_sum: o.loss_sum,
                    regularizer_sum: o.regularizer_sum,
                    mu_d: o.stats.mu_d,
                },
                g,
            )
        }
        LossMode::ErmLinear => {
            let (total, g) = linear_softmax_objective(&latents, &model.head.rows, with_gradients)?;
            let stats = batch_norm_means(
                latents.iter().map(|s| (s.domain, s.latent.as_slice())),
                batch.len(),
            )?;
            (
                StepObjective {
                    total,
                    loss_sum: total,
                    regularizer_sum: 0.0,
                    mu_d: stats.mu_d,
                },
                g,
            )
        }
    };

    let Some(g) = grads else {
        return Ok((objective, None));
    };
    let mut out = model.zeros_like();
    out.head.rows = g.head;
    for (trace, gz) in traces.iter().zip(&g.latents) {
        model.extractor.backward(trace, gz, &mut out.extractor);
    }
    Ok((objective, Some(out)))
}

/// One Adam update on a batch grouped by domain.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Vec<&Sample>],
    hyper: &AidgnHyper,
    config: &TrainConfig,
    mode: LossMode,
) -> Result<MetricsRecord> {
    let (objective, grads) = objective_and_gradients(&state.model, batch, hyper, mode, true)?;
    let grads = grads.expect("gradients requested");
    let next_step = state.step + 1;
    for (i, g) in grads.params().iter().enumerate() {
        if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                step: next_step,
                detail: format!(
                    "parameter group {i}, entry {pos}; objective {}, mu_d {:?}",
                    objective.total, objective.mu_d
                ),
            });
        }
    }
    let lr = learning_rate_at(config, state.step);
    state
        .optimizer
        .update(state.model.params_mut(), grads.params(), lr);
    state.model.head.renormalize();
    state.step = next_step;

    let n: usize = batch.iter().map(|g| g.len()).sum();
    Ok(MetricsRecord {
        step: state.step,
        train_loss: objective.loss_sum / n as f64,
        regularizer: objective.regularizer_sum / n as f64,
        mu_d: objective.mu_d,
        validation_accuracy: None,
        target_accuracy: None,
        mean_entropy: None,
        wall_clock_s: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub mean_entropy: f64,
}

/// Accuracy of the argmax prediction and mean entropy of
/// `softmax(κ · cos)` (plain `softmax(logits)` for a linear head).
pub fn evaluate(model: &Model, data: &Dataset, kappa: f64) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut entropy_sum = 0.0;
    for s in data.samples() {
        let scores = model.scores(&s.x)?;
        if argmax(&scores) == s.label {
            correct += 1;
        }
        let logits: Vec<f64> = match model.head.kind {
            HeadKind::Cosine => scores.iter().map(|c| kappa * c).collect(),
            HeadKind::Linear => scores,
        };
        entropy_sum += entropy(&softmax(&logits));
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        accuracy: correct as f64 / n,
        mean_entropy: entropy_sum / n,
    })
}

/// Index of the record with the highest validation accuracy; the earliest
/// wins ties. Records without a validation accuracy are skipped.
pub fn select_checkpoint(history: &[MetricsRecord]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in history.iter().enumerate() {
        if let Some(acc) = r.validation_accuracy {
            if best.is_none_or(|(_, b)| acc > b) {
                best = Some((i, acc));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<MetricsRecord>,
    pub selected: Option<usize>,
}

struct DomainSampler {
    order: Vec<usize>,
    pos: usize,
}

impl DomainSampler {
    fn new(len: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    fn draw(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let len = self.order.len();
        if len < count {
            return (0..count).map(|_| rng.random_range(0..len)).collect();
        }
        (0..count)
            .map(|_| {
                if self.pos == len {
                    self.order.shuffle(rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Trains on `sources` (one dataset per domain) and evaluates on the optional
/// validation and target sets at every `eval_interval` steps and at the end.
pub fn train(
    sources: &[Dataset],
    validation: Option<&Dataset>,
    target: Option<&Dataset>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    hyper: &AidgnHyper,
    mode: LossMode,
) -> Result<TrainOutcome> {
    config.validate()?;
    hyper.validate()?;
    if sources.is_empty() {
        return Err(Error::invalid(
            "task.source_means",
            "need at least one source domain",
        ));
    }
    for (d, s) in sources.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::EmptyDomain(d));
        }
    }
    let dim = sources[0].dim();
    let classes = sources
        .iter()
        .chain(validation)
        .chain(target)
        .map(|d| d.label_bound())
        .max()
        .unwrap_or(0)
        .max(2);

    let mut state = TrainState::new(dim, classes, model_config, mode, config.seed)?;
    let mut samplers: Vec<DomainSampler> = sources
        .iter()
        .map(|s| DomainSampler::new(s.len(), &mut state.rng))
        .collect();

    let started = Instant::now();
    let mut history = Vec::new();
    while state.step < config.iterations {
        let batch: Vec<Vec<&Sample>> = sources
            .iter()
            .zip(&mut samplers)
            .map(|(data, sampler)| {
                sampler
                    .draw(config.batch_per_domain, &mut state.rng)
                    .into_iter()
                    .map(|i| &data.samples()[i])
                    .collect()
            })
            .collect();
        let mut record = train_step(&mut state, &batch, hyper, config, mode)?;
        if state.step % config.eval_interval == 0 || state.step == config.iterations {
            if let Some(v) = validation.filter(|v| !v.is_empty()) {
                record.validation_accuracy = Some(evaluate(&state.model, v, hyper.kappa)?.accuracy);
            }
            if let Some(t) = target.filter(|t| !t.is_empty()) {
                let rep = evaluate(&state.model, t, hyper.kappa)?;
                record.target_accuracy = Some(rep.accuracy);
                record.mean_entropy = Some(rep.mean_entropy);
            }
            record.wall_clock_s = started.elapsed().as_secs_f64();
            history.push(record);
        }
    }
    let selected = select_checkpoint(&history);
    Ok(TrainOutcome {
        state,
        history,
        selected,
    })
}
