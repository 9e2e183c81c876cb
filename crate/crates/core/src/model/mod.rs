//! Feature extractor, classifier head, optimizer and the training loop.

mod adam;
pub mod checkpoint;
mod network;
mod train;

use rand::Rng;

pub use adam::Adam;
pub use network::{
    cosine_scores, forward_features, Activation, ClassifierHead, DenseLayer, FeatureExtractor,
    ForwardTrace, HeadKind,
};
pub use train::{
    evaluate, learning_rate_at, objective_and_gradients, pinned_objective, select_checkpoint,
    train, train_step, EvalReport, LossMode, MetricsRecord, ModelConfig, StepObjective,
    TrainConfig, TrainOutcome, TrainState,
};

use crate::error::Result;

/// Extractor and head trained together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub extractor: FeatureExtractor,
    pub head: ClassifierHead,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        config: &ModelConfig,
        head: HeadKind,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut widths = Vec::with_capacity(config.hidden.len() + 2);
        widths.push(input_dim);
        widths.extend(&config.hidden);
        widths.push(config.latent_dim);
        let extractor = FeatureExtractor::init(&widths, config.activation, rng)?;
        let head = ClassifierHead::init(head, classes, config.latent_dim, rng);
        Ok(Self { extractor, head })
    }

    /// All-zero model with the same shapes, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        Self {
            extractor: self.extractor.zeros_like(),
            head: ClassifierHead {
                kind: self.head.kind,
                rows: self.head.rows.iter().map(|r| vec![0.0; r.len()]).collect(),
            },
        }
    }

    /// Parameter buffers in a fixed order: per layer weights then bias, then
    /// head rows.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.extractor.layers {
            out.push(&l.weights);
            out.push(&l.bias);
        }
        out.extend(self.head.rows.iter().map(|r| r.as_slice()));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.extractor.layers {
            out.push(&mut l.weights);
            out.push(&mut l.bias);
        }
        out.extend(self.head.rows.iter_mut().map(|r| r.as_mut_slice()));
        out
    }

    pub fn param_shapes(&self) -> Vec<usize> {
        self.params().iter().map(|p| p.len()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.param_shapes().iter().sum()
    }

    pub fn latent(&self, x: &[f64]) -> Result<Vec<f64>> {
        forward_features(x, &self.extractor)
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.scores(&self.latent(x)?)
    }
}
