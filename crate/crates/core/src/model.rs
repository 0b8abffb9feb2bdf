//! A small fully connected network: ReLU hidden layers, softmax output,
//! mean cross-entropy loss, exact backpropagation and plain SGD.
//!
//! Parameters live in one flat `f64` vector. For every consecutive pair of
//! layer sizes `(fan_in, fan_out)` the vector holds the weight matrix
//! (`fan_in` rows of `fan_out` entries, row `i` belonging to input unit `i`)
//! followed by the `fan_out` biases.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::math::{axpy, dot};
use crate::rng::{self, INIT_TAG};
use crate::{Error, Result};

/// Architecture used for the MNIST experiments.
pub const MNIST_ARCH: [usize; 4] = [784, 200, 200, 10];

/// Number of parameters (weights plus biases) of an architecture.
pub fn param_count(arch: &[usize]) -> usize {
    arch.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
}

fn validate_arch(arch: &[usize]) -> Result<()> {
    if arch.len() < 2 {
        return Err(Error::Config(alloc::format!(
            "architecture needs at least an input and an output layer, got {arch:?}"
        )));
    }
    if arch.contains(&0) {
        return Err(Error::Config(alloc::format!(
            "layer sizes must be positive, got {arch:?}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

impl Layer {
    fn weight_row(&self, i: usize) -> core::ops::Range<usize> {
        let start = self.weights + i * self.fan_out;
        start..start + self.fan_out
    }

    fn bias_range(&self) -> core::ops::Range<usize> {
        self.biases..self.biases + self.fan_out
    }
}

fn layers(arch: &[usize]) -> impl Iterator<Item = Layer> + '_ {
    let mut offset = 0;
    arch.windows(2).map(move |p| {
        let layer = Layer {
            fan_in: p[0],
            fan_out: p[1],
            weights: offset,
            biases: offset + p[0] * p[1],
        };
        offset += p[0] * p[1] + p[1];
        layer
    })
}

/// Flattened weights and biases together with the layer sizes they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    values: Vec<f64>,
    arch: Vec<usize>,
}

impl ModelParams {
    pub fn zeros(arch: &[usize]) -> Result<Self> {
        validate_arch(arch)?;
        Ok(Self {
            values: vec![0.0; param_count(arch)],
            arch: arch.to_vec(),
        })
    }

    pub fn from_values(arch: &[usize], values: Vec<f64>) -> Result<Self> {
        validate_arch(arch)?;
        let expected = param_count(arch);
        if values.len() != expected {
            return Err(Error::Shape {
                what: "parameter vector",
                expected,
                actual: values.len(),
            });
        }
        Ok(Self {
            values,
            arch: arch.to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn arch(&self) -> &[usize] {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch[0]
    }

    pub fn num_classes(&self) -> usize {
        self.arch[self.arch.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// A borrowed mini-batch: row-major features plus one label per row.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [u8],
    input_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [u8], input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Data("batch must hold at least one sample".into()));
        }
        if input_dim == 0 || features.len() != labels.len() * input_dim {
            return Err(Error::Shape {
                what: "batch features",
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &'a [u8] {
        self.labels
    }

    fn samples(&self) -> impl ExactSizeIterator<Item = (&'a [f64], u8)> + 'a {
        self.features
            .chunks_exact(self.input_dim)
            .zip(self.labels.iter().copied())
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params(arch: &[usize], seed: u64) -> Result<ModelParams> {
    let mut params = ModelParams::zeros(arch)?;
    let mut rng = rng::stream(seed, 0, INIT_TAG);
    for layer in layers(arch) {
        let limit = libm::sqrt(6.0 / (layer.fan_in + layer.fan_out) as f64);
        for w in &mut params.values[layer.weights..layer.biases] {
            *w = rng.random_range(-limit..=limit);
        }
    }
    Ok(params)
}

/// Scratch buffers for single-sample forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    layers: Vec<Layer>,
    /// `acts[l]` is the output of layer `l - 1`; `acts[0]` is unused because
    /// the input is borrowed. The last entry holds class probabilities.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn new(arch: &[usize]) -> Self {
        Self {
            layers: layers(arch).collect(),
            acts: arch.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: arch.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn probabilities(&self) -> &[f64] {
        &self.acts[self.acts.len() - 1]
    }
}

/// Runs one sample forward. With `label` set, the last activation buffer ends
/// up holding softmax probabilities and the sample's negative log-likelihood
/// is returned; otherwise the buffer keeps the raw logits.
fn forward_sample(values: &[f64], x: &[f64], ws: &mut Workspace, label: Option<usize>) -> f64 {
    let depth = ws.layers.len();
    for l in 0..depth {
        let layer = ws.layers[l];
        let (head, tail) = ws.acts.split_at_mut(l + 1);
        let input: &[f64] = if l == 0 { x } else { &head[l] };
        let out = &mut tail[0];
        out.copy_from_slice(&values[layer.bias_range()]);
        for (i, &a) in input.iter().enumerate() {
            // MNIST inputs and ReLU outputs are mostly exact zeros.
            if a != 0.0 {
                axpy(a, &values[layer.weight_row(i)], out);
            }
        }
        if l + 1 < depth {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
    let Some(label) = label else {
        return f64::NAN;
    };
    let logits = &mut ws.acts[depth];
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&z| libm::exp(z - max)).sum();
    let lse = max + libm::log(sum);
    let nll = lse - logits[label];
    for z in logits.iter_mut() {
        *z = libm::exp(*z - lse);
    }
    nll
}

/// Forward plus backward for one sample; adds the sample's gradient into
/// `grad` and returns its loss.
fn accumulate_sample(
    values: &[f64],
    x: &[f64],
    label: usize,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64 {
    let depth = ws.layers.len();
    let loss = forward_sample(values, x, ws, Some(label));

    ws.deltas[depth].copy_from_slice(&ws.acts[depth]);
    ws.deltas[depth][label] -= 1.0;

    for l in (0..depth).rev() {
        let layer = ws.layers[l];
        let (dlo, dhi) = ws.deltas.split_at_mut(l + 1);
        let delta = &dhi[0];
        axpy(1.0, delta, &mut grad[layer.bias_range()]);
        let input: &[f64] = if l == 0 { x } else { &ws.acts[l] };
        for (i, &a) in input.iter().enumerate() {
            if a != 0.0 {
                axpy(a, delta, &mut grad[layer.weight_row(i)]);
            }
        }
        if l > 0 {
            let below = &mut dlo[l];
            for (i, d) in below.iter_mut().enumerate() {
                *d = if ws.acts[l][i] > 0.0 {
                    dot(&values[layer.weight_row(i)], delta)
                } else {
                    0.0
                };
            }
        }
    }
    loss
}

fn check_input(params: &ModelParams, input_dim: usize, labels: &[u8]) -> Result<()> {
    if input_dim != params.input_dim() {
        return Err(Error::Shape {
            what: "input dimension",
            expected: params.input_dim(),
            actual: input_dim,
        });
    }
    let classes = params.num_classes();
    if let Some(&bad) = labels.iter().find(|&&y| usize::from(y) >= classes) {
        return Err(Error::Data(alloc::format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean gradient over `samples`, written into `grad` (overwriting it).
/// Returns the mean loss. Labels must already be validated.
pub(crate) fn batch_gradient<'a, I>(
    params: &ModelParams,
    samples: I,
    ws: &mut Workspace,
    grad: &mut [f64],
) -> f64
where
    I: Iterator<Item = (&'a [f64], u8)>,
{
    grad.fill(0.0);
    let mut loss = 0.0;
    let mut n = 0usize;
    for (x, y) in samples {
        loss += accumulate_sample(&params.values, x, usize::from(y), ws, grad);
        n += 1;
    }
    let scale = 1.0 / n as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    loss * scale
}

/// Mean negative log-likelihood and the row-major `batch × classes` matrix
/// of softmax probabilities.
pub fn forward_loss(params: &ModelParams, batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
    check_input(params, batch.input_dim, batch.labels)?;
    let mut ws = Workspace::new(&params.arch);
    let classes = params.num_classes();
    let mut probs = Vec::with_capacity(batch.len() * classes);
    let mut loss = 0.0;
    for (x, y) in batch.samples() {
        loss += forward_sample(&params.values, x, &mut ws, Some(usize::from(y)));
        probs.extend_from_slice(ws.probabilities());
    }
    Ok((loss / batch.len() as f64, probs))
}

/// Gradient of the mean loss with respect to every parameter.
pub fn backward(params: &ModelParams, batch: &Batch<'_>) -> Result<Vec<f64>> {
    check_input(params, batch.input_dim, batch.labels)?;
    let mut ws = Workspace::new(&params.arch);
    let mut grad = vec![0.0; params.len()];
    batch_gradient(params, batch.samples(), &mut ws, &mut grad);
    Ok(grad)
}

/// `values - eta * gradient`.
pub fn sgd_step(params: &ModelParams, gradient: &[f64], eta: f64) -> Result<ModelParams> {
    let mut next = params.clone();
    sgd_step_in_place(&mut next, gradient, eta)?;
    Ok(next)
}

pub fn sgd_step_in_place(params: &mut ModelParams, gradient: &[f64], eta: f64) -> Result<()> {
    if gradient.len() != params.len() {
        return Err(Error::Shape {
            what: "gradient",
            expected: params.len(),
            actual: gradient.len(),
        });
    }
    if !(eta >= 0.0) || !eta.is_finite() {
        return Err(Error::Config(alloc::format!(
            "learning rate must be finite and non-negative, got {eta}"
        )));
    }
    axpy(-eta, gradient, &mut params.values);
    Ok(())
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax prediction equals the label.
pub fn evaluate(params: &ModelParams, features: &[f64], labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let input_dim = features.len() / labels.len();
    if features.len() != input_dim * labels.len() {
        return Err(Error::Shape {
            what: "evaluation features",
            expected: labels.len() * params.input_dim(),
            actual: features.len(),
        });
    }
    check_input(params, input_dim, labels)?;
    let mut ws = Workspace::new(&params.arch);
    let depth = params.arch.len() - 1;
    let correct = features
        .chunks_exact(input_dim)
        .zip(labels)
        .filter(|(x, &y)| {
            forward_sample(&params.values, x, &mut ws, None);
            argmax(&ws.acts[depth]) == usize::from(y)
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}
