//! Feedforward classifier: sigmoid hidden layers, softmax output,
//! cross-entropy loss, trained with mini-batch gradient descent.
//!
//! Everything is deterministic given the config seed. Parameter
//! initialization and the per-epoch shuffle draw from separate ChaCha
//! streams of the same seed.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Label, LabeledSample, FEATURE_COUNT};

pub const CLASS_COUNT: usize = 3;
pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"NTMLP\0\0\0";

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("invalid topology {0:?}: need input {FEATURE_COUNT}, output {CLASS_COUNT} and at least one hidden layer")]
    InvalidTopology(Vec<usize>),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected} inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, trace: TrainingTrace },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub learning_rate: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            layers: vec![4, 5, 4, 3],
            epochs: 200,
            batch_size: 128,
            seed: 1234,
            learning_rate: 0.3,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let l = &self.layers;
        if l.len() < 3 || l[0] != FEATURE_COUNT || l[l.len() - 1] != CLASS_COUNT || l.contains(&0) {
            return Err(NnError::InvalidTopology(l.clone()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(NnError::InvalidConfig(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Sigmoid,
    Softmax,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Sigmoid => 0,
            Activation::Softmax => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Sigmoid),
            1 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

/// Fully connected layer. `weights[i * fan_out + j]` connects input `i`
/// to output `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseLayer {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            weights: vec![0.0; fan_in * fan_out],
            biases: vec![0.0; fan_out],
        }
    }

    fn affine(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.biases.clone();
        for (i, &x) in input.iter().enumerate() {
            let row = &self.weights[i * self.fan_out..(i + 1) * self.fan_out];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
        out
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub layers: Vec<DenseLayer>,
}

/// Loss gradient with the same shape as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<DenseLayer>,
}

impl Gradients {
    fn zeros_like(model: &MlpModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.fan_in, l.fan_out))
                .collect(),
        }
    }

    fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.biases
                .iter_mut()
                .zip(&b.biases)
                .for_each(|(x, y)| *x += y);
        }
    }

    /// Flattened view in the same order as [`MlpModel::param`].
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }
}

/// Per-epoch mean cross-entropy and accuracy over the whole training set,
/// measured after the epoch's updates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loss.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for (e, (l, a)) in self.loss.iter().zip(&self.accuracy).enumerate() {
            s.push_str(&format!("{},{},{}\n", e + 1, l, a));
        }
        s
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest component; ties go to the lowest index.
pub fn argmax_label(probs: &[f64]) -> Label {
    let mut best = 0;
    for (k, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = k;
        }
    }
    Label::from_code(best as u8).unwrap_or(Label::Hold)
}

struct ForwardCache {
    /// Input followed by each hidden layer's activations.
    activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(cfg: &MlpConfig) -> Result<MlpModel, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(INIT_STREAM);
        let layers = cfg
            .layers
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = DenseLayer::zeros(fan_in, fan_out);
                for v in &mut layer.weights {
                    *v = rng.gen_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            config: cfg.clone(),
            hidden_activation: Activation::Sigmoid,
            output_activation: Activation::Softmax,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        let mut activations = vec![x.to_vec()];
        let (last, hidden) = self.layers.split_last().expect("at least two layers");
        for layer in hidden {
            let z = layer.affine(activations.last().expect("non-empty"));
            activations.push(z.into_iter().map(sigmoid).collect());
        }
        let logits = last.affine(activations.last().expect("non-empty"));
        ForwardCache {
            activations,
            logits,
        }
    }

    /// Class probabilities for one feature vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        Ok(softmax(&self.forward_cache(x).logits))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label, NnError> {
        Ok(argmax_label(&self.forward(x)?))
    }

    /// Cross-entropy `-ln p(label)` computed from log-sum-exp.
    pub fn loss(&self, x: &[f64], label: Label) -> Result<f64, NnError> {
        self.check_input(x)?;
        let logits = self.forward_cache(x).logits;
        Ok(log_sum_exp(&logits) - logits[label.index()])
    }

    /// Analytic gradient of the single-sample cross-entropy.
    pub fn backprop(&self, x: &[f64], label: Label) -> Result<Gradients, NnError> {
        self.check_input(x)?;
        let cache = self.forward_cache(x);
        Ok(self.backprop_cached(&cache, label))
    }

    fn backprop_cached(&self, cache: &ForwardCache, label: Label) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = softmax(&cache.logits);
        delta[label.index()] -= 1.0;

        for l in (0..self.layers.len()).rev() {
            let input = &cache.activations[l];
            let layer = &self.layers[l];
            let g = &mut grads.layers[l];
            for (i, &a) in input.iter().enumerate() {
                let row = &mut g.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                for (w, &d) in row.iter_mut().zip(&delta) {
                    *w = a * d;
                }
            }
            g.biases.copy_from_slice(&delta);

            if l > 0 {
                delta = input
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| {
                        let row = &layer.weights[i * layer.fan_out..(i + 1) * layer.fan_out];
                        let back: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                        back * a * (1.0 - a)
                    })
                    .collect();
            }
        }
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    fn locate(&self, mut k: usize) -> (usize, bool, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if k < layer.weights.len() {
                return (l, true, k);
            }
            k -= layer.weights.len();
            if k < layer.biases.len() {
                return (l, false, k);
            }
            k -= layer.biases.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `k` in flattened order: per layer, weights then biases.
    pub fn param(&self, k: usize) -> f64 {
        match self.locate(k) {
            (l, true, i) => self.layers[l].weights[i],
            (l, false, i) => self.layers[l].biases[i],
        }
    }

    pub fn set_param(&mut self, k: usize, value: f64) {
        match self.locate(k) {
            (l, true, i) => self.layers[l].weights[i] = value,
            (l, false, i) => self.layers[l].biases[i] = value,
        }
    }

    fn apply(&mut self, grads: &Gradients, scale: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer
                .weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(w, d)| *w -= scale * d);
            layer
                .biases
                .iter_mut()
                .zip(&g.biases)
                .for_each(|(b, d)| *b -= scale * d);
        }
    }

    fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    fn evaluate(&self, samples: &[LabeledSample]) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for s in samples {
            let logits = self.forward_cache(&s.features).logits;
            loss += log_sum_exp(&logits) - logits[s.label.index()];
            if argmax_label(&softmax(&logits)) == s.label {
                correct += 1;
            }
        }
        let n = samples.len() as f64;
        (loss / n, correct as f64 / n)
    }

    /// Runs exactly `config.epochs` epochs of mini-batch gradient descent.
    ///
    /// Samples are put in a canonical order before the seeded shuffle, so
    /// the result does not depend on the order they were passed in.
    pub fn train(&self, samples: &[LabeledSample]) -> Result<(MlpModel, TrainingTrace), NnError> {
        self.config.validate()?;
        if samples.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if let Some(s) = samples
            .iter()
            .find(|s| s.features.len() != self.input_dim())
        {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: s.features.len(),
            });
        }

        let mut data = samples.to_vec();
        data.sort_by(canonical_order);

        let mut model = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut trace = TrainingTrace::default();

        for epoch in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(self.config.batch_size) {
                let mut total = Gradients::zeros_like(&model);
                for &i in batch {
                    let cache = model.forward_cache(&data[i].features);
                    total.accumulate(&model.backprop_cached(&cache, data[i].label));
                }
                model.apply(&total, self.config.learning_rate / batch.len() as f64);
            }
            let (loss, acc) = model.evaluate(&data);
            trace.loss.push(loss);
            trace.accuracy.push(acc);
            if !loss.is_finite() || !model.params_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch: epoch + 1,
                    trace,
                });
            }
        }
        Ok((model, trace))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let cfg = &self.config;
        out.extend_from_slice(&(cfg.layers.len() as u32).to_le_bytes());
        for &n in &cfg.layers {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        out.extend_from_slice(&(cfg.epochs as u64).to_le_bytes());
        out.extend_from_slice(&(cfg.batch_size as u64).to_le_bytes());
        out.extend_from_slice(&cfg.seed.to_le_bytes());
        out.extend_from_slice(&cfg.learning_rate.to_le_bytes());
        out.push(self.hidden_activation.code());
        out.push(self.output_activation.code());
        for layer in &self.layers {
            for v in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MlpModel, NnError> {
        let mut r = ByteReader { buf: bytes };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(NnError::CorruptModel("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let n_layers = r.u32()? as usize;
        if n_layers > 64 {
            return Err(NnError::CorruptModel(format!("{n_layers} layers")));
        }
        let layers = (0..n_layers)
            .map(|_| r.u64().map(|v| v as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let config = MlpConfig {
            layers,
            epochs: r.u64()? as usize,
            batch_size: r.u64()? as usize,
            seed: r.u64()?,
            learning_rate: r.f64()?,
        };
        config
            .validate()
            .map_err(|e| NnError::CorruptModel(e.to_string()))?;
        let act = |c: u8| {
            Activation::from_code(c)
                .ok_or_else(|| NnError::CorruptModel(format!("activation code {c}")))
        };
        let hidden_activation = act(r.u8()?)?;
        let output_activation = act(r.u8()?)?;

        let mut model_layers = Vec::new();
        for w in config.layers.windows(2) {
            let mut layer = DenseLayer::zeros(w[0], w[1]);
            for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *v = r.f64()?;
                if !v.is_finite() {
                    return Err(NnError::CorruptModel("non-finite parameter".into()));
                }
            }
            model_layers.push(layer);
        }
        if !r.buf.is_empty() {
            return Err(NnError::CorruptModel(format!(
                "{} trailing bytes",
                r.buf.len()
            )));
        }
        Ok(MlpModel {
            config,
            hidden_activation,
            output_activation,
            layers: model_layers,
        })
    }
}

fn canonical_order(a: &LabeledSample, b: &LabeledSample) -> Ordering {
    a.features
        .iter()
        .zip(&b.features)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.label.cmp(&b.label))
        .then(a.raw_close.total_cmp(&b.raw_close))
        .then(a.date.cmp(&b.date))
}

struct ByteReader<'a> {
    buf: &'a [u8],
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.buf.len() < n {
            return Err(NnError::CorruptModel("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, NnError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, NnError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn init(cfg: &MlpConfig) -> Result<MlpModel, NnError> {
    MlpModel::init(cfg)
}

pub fn train(
    model: &MlpModel,
    samples: &[LabeledSample],
) -> Result<(MlpModel, TrainingTrace), NnError> {
    model.train(samples)
}

/// Relative discrepancy used by the gradient check. Components smaller than
/// `GRAD_SCALE_FLOOR` are compared on an absolute scale.
pub const GRAD_SCALE_FLOOR: f64 = 1e-3;

pub fn relative_discrepancy(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

/// Central finite-difference gradient of the sample loss.
pub fn numeric_gradient(model: &MlpModel, sample: &LabeledSample, epsilon: f64) -> Vec<f64> {
    let mut probe = model.clone();
    (0..model.param_count())
        .map(|k| {
            let orig = model.param(k);
            probe.set_param(k, orig + epsilon);
            let up = probe
                .loss(&sample.features, sample.label)
                .expect("input checked");
            probe.set_param(k, orig - epsilon);
            let down = probe
                .loss(&sample.features, sample.label)
                .expect("input checked");
            probe.set_param(k, orig);
            (up - down) / (2.0 * epsilon)
        })
        .collect()
}

/// Largest discrepancy between a supplied analytic gradient and central
/// finite differences.
pub fn gradient_check_against(
    model: &MlpModel,
    sample: &LabeledSample,
    epsilon: f64,
    analytic: &Gradients,
) -> f64 {
    let numeric = numeric_gradient(model, sample, epsilon);
    analytic
        .flat()
        .into_iter()
        .zip(numeric)
        .map(|(a, n)| relative_discrepancy(a, n))
        .fold(0.0, f64::max)
}

/// Compares backpropagation with central finite differences and returns
/// the maximum relative discrepancy over all parameters.
pub fn gradient_check(
    model: &MlpModel,
    sample: &LabeledSample,
    epsilon: f64,
) -> Result<f64, NnError> {
    let analytic = model.backprop(&sample.features, sample.label)?;
    Ok(gradient_check_against(model, sample, epsilon, &analytic))
}
