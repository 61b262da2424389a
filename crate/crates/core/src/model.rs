//! Dense feed-forward classifier with softmax cross-entropy, trained by
//! plain mini-batch SGD. Parameters live in one flat vector so that updates,
//! aggregates and clipping all operate on the same representation.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed in terms of the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub class_count: usize,
    pub activation: Activation,
}

/// One dense layer's slice of the flat parameter vector. Weights are stored
/// row-major as `fan_out x fan_in`, followed by `fan_out` biases.
#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl Layer {
    fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn biases(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

impl ModelSpec {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        class_count: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = ModelSpec {
            input_dim,
            hidden_dims,
            class_count,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Multinomial logistic regression.
    pub fn logistic(input_dim: usize, class_count: usize) -> Result<Self> {
        Self::new(input_dim, Vec::new(), class_count, Activation::Relu)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.class_count < 2 {
            return Err(Error::InvalidSpec("class_count must be >= 2".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut widths = Vec::with_capacity(self.hidden_dims.len() + 2);
        widths.push(self.input_dim);
        widths.extend(&self.hidden_dims);
        widths.push(self.class_count);
        widths
    }

    fn layers(&self) -> Vec<Layer> {
        let widths = self.widths();
        let mut offset = 0;
        widths
            .windows(2)
            .map(|pair| {
                let layer = Layer {
                    fan_in: pair[0],
                    fan_out: pair[1],
                    offset,
                };
                offset += (pair[0] + 1) * pair[1];
                layer
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.widths()
            .windows(2)
            .map(|pair| (pair[0] + 1) * pair[1])
            .sum()
    }
}

/// Flat parameter vector of a model described by some [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`
    pub fn add_scaled(&self, other: &[f64], scale: f64) -> ParamVector {
        ParamVector(
            self.0
                .iter()
                .zip(other)
                .map(|(a, b)| a + scale * b)
                .collect(),
        )
    }

    /// `self - other`
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = spec.param_count();
        if self.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: self.len(),
            });
        }
        Ok(())
    }
}

pub(crate) fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    pub label: usize,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        LabeledExample { features, label }
    }

    fn check(&self, spec: &ModelSpec) -> Result<()> {
        if self.features.len() != spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: spec.input_dim,
                actual: self.features.len(),
            });
        }
        if self.label >= spec.class_count {
            return Err(Error::LabelOutOfRange {
                label: self.label,
                class_count: spec.class_count,
            });
        }
        Ok(())
    }
}

/// A client's contribution for one round: the parameter delta it sends.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub client_id: usize,
    pub delta: ParamVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub accuracy: f64,
}

/// Glorot-uniform weights, zero biases.
pub fn init_model(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = seed::rng(seed, &[stream::INIT]);
    let mut params = vec![0.0; spec.param_count()];
    for layer in spec.layers() {
        let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        for w in &mut params[layer.weights()] {
            *w = rng.gen_range(-limit..=limit);
        }
    }
    ParamVector(params)
}

/// Activations of every layer for one input; the last entry holds the logits.
struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

fn forward_trace(params: &[f64], spec: &ModelSpec, layers: &[Layer], x: &[f64]) -> Trace {
    let mut pre = Vec::with_capacity(layers.len());
    let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers.len() + 1);
    post.push(x.to_vec());
    for (li, layer) in layers.iter().enumerate() {
        let input = &post[li];
        let w = &params[layer.weights()];
        let b = &params[layer.biases()];
        let z: Vec<f64> = (0..layer.fan_out)
            .map(|o| {
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                b[o] + row.iter().zip(input).map(|(wi, xi)| wi * xi).sum::<f64>()
            })
            .collect();
        let a = if li + 1 == layers.len() {
            z.clone()
        } else {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        };
        pre.push(z);
        post.push(a);
    }
    Trace { pre, post }
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

/// Index of the largest logit; the lowest class id wins ties.
fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

pub fn logits(params: &ParamVector, spec: &ModelSpec, features: &[f64]) -> Result<Vec<f64>> {
    params.check_spec(spec)?;
    if features.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: features.len(),
        });
    }
    let layers = spec.layers();
    let mut trace = forward_trace(&params.0, spec, &layers, features);
    Ok(trace.post.pop().unwrap_or_default())
}

fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    // Clamp tiny negative rounding residue so the loss is never below zero.
    (log_sum_exp(logits) - logits[label]).max(0.0)
}

/// Mean softmax cross-entropy and accuracy over `batch`.
pub fn forward_eval(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &[LabeledExample],
) -> Result<Evaluation> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    params.check_spec(spec)?;
    let layers = spec.layers();
    let mut losses = Vec::with_capacity(batch.len());
    let mut correct = 0usize;
    for example in batch {
        example.check(spec)?;
        let trace = forward_trace(&params.0, spec, &layers, &example.features);
        let out = trace.post.last().expect("at least one layer");
        losses.push(cross_entropy(out, example.label));
        if argmax(out) == example.label {
            correct += 1;
        }
    }
    // Fixed reduction order makes the mean independent of batch order.
    losses.sort_by(f64::total_cmp);
    let mean_loss = losses.iter().sum::<f64>() / batch.len() as f64;
    Ok(Evaluation {
        mean_loss,
        accuracy: correct as f64 / batch.len() as f64,
    })
}

/// Mean loss and its gradient with respect to every parameter.
pub fn loss_and_gradient(
    params: &ParamVector,
    spec: &ModelSpec,
    batch: &[&LabeledExample],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    params.check_spec(spec)?;
    let layers = spec.layers();
    let mut grad = vec![0.0; params.len()];
    let mut total = 0.0;
    for example in batch {
        example.check(spec)?;
        total += accumulate_example(&params.0, spec, &layers, example, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

fn accumulate_example(
    params: &[f64],
    spec: &ModelSpec,
    layers: &[Layer],
    example: &LabeledExample,
    grad: &mut [f64],
) -> f64 {
    let trace = forward_trace(params, spec, layers, &example.features);
    let out = trace.post.last().expect("at least one layer");
    let lse = log_sum_exp(out);
    let loss = (lse - out[example.label]).max(0.0);

    // dL/dz for the output layer: softmax - onehot.
    let mut delta: Vec<f64> = out.iter().map(|l| (l - lse).exp()).collect();
    delta[example.label] -= 1.0;

    for li in (0..layers.len()).rev() {
        let layer = layers[li];
        let input = &trace.post[li];
        let wr = layer.weights();
        {
            let gw = &mut grad[wr.clone()];
            for o in 0..layer.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
        }
        for (g, d) in grad[layer.biases()].iter_mut().zip(&delta) {
            *g += d;
        }
        if li == 0 {
            break;
        }
        let w = &params[wr];
        let prev_pre = &trace.pre[li - 1];
        let prev_post = &trace.post[li];
        delta = (0..layer.fan_in)
            .map(|i| {
                let back: f64 = (0..layer.fan_out)
                    .map(|o| w[o * layer.fan_in + i] * delta[o])
                    .sum();
                back * spec.activation.derivative(prev_pre[i], prev_post[i])
            })
            .collect();
    }
    loss
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Mini-batch size; `0` means the whole shard (one step per epoch).
    pub batch_size: usize,
}

/// Run `epochs` of mini-batch SGD from `global` and return the parameter
/// delta. The shuffle order of each epoch is fixed by `seed`.
pub fn local_train(
    client_id: usize,
    global: &ParamVector,
    spec: &ModelSpec,
    shard: &[LabeledExample],
    train: &TrainConfig,
    seed: u64,
) -> Result<LocalUpdate> {
    global.check_spec(spec)?;
    if train.epochs == 0 {
        return Ok(LocalUpdate {
            client_id,
            delta: ParamVector::zeros(global.len()),
        });
    }
    if shard.is_empty() {
        return Err(Error::EmptyLocalDataset);
    }
    let batch_size = match train.batch_size {
        0 => shard.len(),
        b => b.min(shard.len()),
    };
    let mut rng = seed::rng(seed, &[stream::SHUFFLE]);
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut params = global.clone();
    for _ in 0..train.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&LabeledExample> = chunk.iter().map(|&i| &shard[i]).collect();
            let (_, grad) = loss_and_gradient(&params, spec, &batch)?;
            for (p, g) in params.0.iter_mut().zip(&grad) {
                *p -= train.lr * g;
            }
        }
    }
    Ok(LocalUpdate {
        client_id,
        delta: params.sub(global),
    })
}
