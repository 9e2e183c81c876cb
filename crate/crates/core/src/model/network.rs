//! Feed-forward feature extractor and classifier head with hand-written
//! reverse-mode gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecops::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `log(1 + e^x)`
    #[default]
    Softplus,
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Softplus => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Identity => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Softplus,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Identity,
            _ => return None,
        })
    }
}

/// Affine layer `y = W x + b`, `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, std: f64, rng: &mut R) -> Self {
        let weights = (0..inputs * outputs)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(dot(row, x) + self.bias[o]);
        }
    }
}

/// Stack of dense layers; the activation follows every layer but the last,
/// so the latent output is unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Pre-activations of every layer for one input, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn latent(&self) -> &[f64] {
        self.pre.last().expect("extractor has at least one layer")
    }
}

impl FeatureExtractor {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid(
                "model.hidden",
                "extractor needs at least one layer",
            ));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::DimensionMismatch {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid(
                    "layers",
                    "parameter buffer has the wrong size",
                ));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Random initialization with variance `2/fan_in` for rectifiers and
    /// `1/fan_in` otherwise; biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid(
                "model",
                "need at least input and latent widths, all > 0",
            ));
        }
        let gain = match activation {
            Activation::Softplus | Activation::Relu => 2.0,
            Activation::Tanh | Activation::Identity => 1.0,
        };
        let layers = widths
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], (gain / w[0] as f64).sqrt(), rng))
            .collect();
        Self::new(layers, activation)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward_traced(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let input: &[f64] = if i == 0 { x } else { &post[i - 1] };
            let mut z = Vec::with_capacity(layer.outputs);
            layer.forward(input, &mut z);
            if i < last {
                post.push(z.iter().map(|&v| self.activation.apply(v)).collect());
            }
            pre.push(z);
        }
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre,
            post,
        })
    }

    /// Accumulates parameter gradients for one traced input given `dL/dz`.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_latent: &[f64],
        grads: &mut FeatureExtractor,
    ) {
        let mut delta = grad_latent.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input: &[f64] = if i == 0 {
                &trace.input
            } else {
                &trace.post[i - 1]
            };
            let g = &mut grads.layers[i];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if i == 0 {
                break;
            }
            let prev_pre = &trace.pre[i - 1];
            let mut next = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            for (n, &z) in next.iter_mut().zip(prev_pre) {
                *n *= self.activation.derivative(z);
            }
            delta = next;
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.inputs, l.outputs))
                .collect(),
            activation: self.activation,
        }
    }
}

pub fn forward_features(x: &[f64], extractor: &FeatureExtractor) -> Result<Vec<f64>> {
    Ok(extractor
        .forward_traced(x)?
        .pre
        .pop()
        .expect("at least one layer"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Unit rows scored by cosine similarity.
    Cosine,
    /// Unnormalized rows scored by raw inner products.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub kind: HeadKind,
    pub rows: Vec<Vec<f64>>,
}

impl ClassifierHead {
    pub fn init<R: Rng + ?Sized>(kind: HeadKind, classes: usize, dim: usize, rng: &mut R) -> Self {
        let std = (1.0 / dim as f64).sqrt();
        let rows = (0..classes)
            .map(|_| {
                (0..dim)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let mut head = Self { kind, rows };
        head.renormalize();
        head
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    /// Projects cosine-head rows back onto the unit sphere; no-op for linear heads.
    pub fn renormalize(&mut self) {
        if self.kind != HeadKind::Cosine {
            return;
        }
        for row in &mut self.rows {
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Cosine scores for a cosine head, raw logits for a linear head.
    pub fn scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            HeadKind::Cosine => cosine_scores(z, self),
            HeadKind::Linear => Ok(self.rows.iter().map(|w| dot(w, z)).collect()),
        }
    }
}

pub fn cosine_scores(z: &[f64], head: &ClassifierHead) -> Result<Vec<f64>> {
    crate::loss::cosine_scores(z, &head.rows)
}
