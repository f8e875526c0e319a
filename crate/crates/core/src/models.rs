//! Small classifiers with hand-written forward and backward passes.
//!
//! Parameters are a single flat vector. Layout, layer by layer from the
//! input: the weight matrix in row-major order (`out` rows of `in`
//! columns, row `o` holds the weights feeding output unit `o`), followed by
//! the `out` biases. Logistic regression is the one-layer case.
//!
//! The kernel is generic over `f32`/`f64`. Parameters, features and
//! gradients cross the API as `f64`; [`Precision`] selects the arithmetic
//! used in between.

use std::ops::{Add, AddAssign, Div, Mul, Sub};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelArch {
    pub kind: ModelKind,
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelArch {
    pub fn logistic(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Logistic,
            input_dim,
            hidden: Vec::new(),
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, hidden: Vec<usize>, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        match self.kind {
            ModelKind::Logistic if !self.hidden.is_empty() => {
                Err(Error::Config("logistic model takes no hidden layers".into()))
            }
            ModelKind::Mlp if self.hidden.is_empty() => {
                Err(Error::Config("mlp needs at least one hidden layer".into()))
            }
            _ if self.hidden.contains(&0) => Err(Error::Config("hidden layer widths must be positive".into())),
            _ => Ok(()),
        }
    }

    /// `[input, hidden.., classes]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.num_classes);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Flat model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(arch: &ModelArch, seed: u64) -> ParamVector {
    let mut rng = seed::stream_rng(seed, Stream::Init, &[]);
    let mut values = Vec::with_capacity(arch.param_count());
    for w in arch.layer_dims().windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        values.extend((0..fan_in * fan_out).map(|_| rng.random_range(-bound..=bound)));
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector(values)
}

/// A borrowed, contiguous mini-batch: row-major features plus labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    labels: &'a [usize],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], dim: usize) -> Result<Self> {
        if dim == 0 || features.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: features.len(),
            });
        }
        Ok(Self { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &'a [f64] {
        self.features
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

trait Scalar:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + Send
    + Sync
{
    const ZERO: Self;
    fn of(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln_1p(self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    fn of(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln_1p(self) -> Self {
        f32::ln_1p(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn of(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
}

/// Per-call scratch: pre-activations and activations of every layer.
struct Net<T> {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<T>,
    pre: Vec<Vec<T>>,
    act: Vec<Vec<T>>,
}

impl<T: Scalar> Net<T> {
    fn new(arch: &ModelArch, theta: &[f64]) -> Self {
        let dims = arch.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for w in dims.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let pre = dims[1..].iter().map(|&d| vec![T::ZERO; d]).collect();
        let act = dims.iter().map(|&d| vec![T::ZERO; d]).collect();
        Self {
            dims,
            offsets,
            params: theta.iter().map(|&v| T::of(v)).collect(),
            pre,
            act,
        }
    }

    fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    /// Fills `pre`/`act`; the logits end up in `pre[last]`.
    fn forward(&mut self, x: &[f64]) {
        for (a, &v) in self.act[0].iter_mut().zip(x) {
            *a = T::of(v);
        }
        let last = self.layers() - 1;
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[self.offsets[l]..self.offsets[l] + fan_in * fan_out];
            let b = &self.params[self.offsets[l] + fan_in * fan_out..][..fan_out];
            let (input, output) = self.act.split_at_mut(l + 1);
            let input = &input[l];
            for o in 0..fan_out {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut z = b[o];
                for (&wi, &ai) in row.iter().zip(input.iter()) {
                    z += wi * ai;
                }
                self.pre[l][o] = z;
                output[0][o] = if l == last || z > T::ZERO { z } else { T::ZERO };
            }
        }
    }

    fn logits(&self) -> &[T] {
        &self.pre[self.layers() - 1]
    }

    /// Cross-entropy of the current logits; also writes softmax into `probs`.
    fn cross_entropy(&self, label: usize, probs: &mut [T]) -> T {
        let logits = self.logits();
        let mut top = 0;
        for (j, &z) in logits.iter().enumerate().skip(1) {
            if z > logits[top] {
                top = j;
            }
        }
        let m = logits[top];
        // Mass outside the top logit, so log(total) = ln_1p(rest) keeps
        // tiny losses representable.
        let mut rest = T::ZERO;
        for (j, (p, &z)) in probs.iter_mut().zip(logits).enumerate() {
            *p = (z - m).exp();
            if j != top {
                rest += *p;
            }
        }
        let total = T::of(1.0) + rest;
        for p in probs.iter_mut() {
            *p = *p / total;
        }
        m - logits[label] + rest.ln_1p()
    }

    /// Accumulates `d loss / d params` for one example into `grad`, given
    /// `delta = d loss / d logits`.
    fn backward(&self, mut delta: Vec<T>, grad: &mut [T]) {
        for l in (0..self.layers()).rev() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let off = self.offsets[l];
            let input = &self.act[l];
            for o in 0..fan_out {
                let d = delta[o];
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + fan_in * fan_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.params[off..off + fan_in * fan_out];
            let prev_pre = &self.pre[l - 1];
            let mut next = vec![T::ZERO; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                for (n, &wi) in next.iter_mut().zip(row) {
                    *n += wi * d;
                }
            }
            // ReLU derivative, zero at zero.
            for (n, &z) in next.iter_mut().zip(prev_pre) {
                if !(z > T::ZERO) {
                    *n = T::ZERO;
                }
            }
            delta = next;
        }
    }
}

/// A model architecture evaluated at a fixed arithmetic precision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub arch: ModelArch,
    #[serde(default)]
    pub precision: Precision,
}

impl Model {
    pub fn new(arch: ModelArch, precision: Precision) -> Result<Self> {
        arch.validate()?;
        Ok(Self { arch, precision })
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn check_params(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                actual: theta.len(),
            });
        }
        Ok(())
    }

    fn check_batch(&self, theta: &[f64], batch: &Batch<'_>) -> Result<()> {
        self.check_params(theta)?;
        if batch.dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: batch.dim(),
            });
        }
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        if let Some(&l) = batch.labels().iter().find(|&&l| l >= self.arch.num_classes) {
            return Err(Error::Domain(format!("label {l} outside 0..{}", self.arch.num_classes)));
        }
        Ok(())
    }

    /// Mean cross-entropy over the batch.
    pub fn loss(&self, theta: &[f64], batch: &Batch<'_>) -> Result<f64> {
        self.check_batch(theta, batch)?;
        Ok(match self.precision {
            Precision::Single => mean_loss::<f32>(&self.arch, theta, batch),
            Precision::Double => mean_loss::<f64>(&self.arch, theta, batch),
        })
    }

    /// Gradient of [`Model::loss`] with respect to the flat parameters.
    pub fn gradient(&self, theta: &[f64], batch: &Batch<'_>) -> Result<Vec<f64>> {
        Ok(self.loss_and_gradient(theta, batch)?.1)
    }

    pub fn loss_and_gradient(&self, theta: &[f64], batch: &Batch<'_>) -> Result<(f64, Vec<f64>)> {
        self.check_batch(theta, batch)?;
        Ok(match self.precision {
            Precision::Single => loss_grad::<f32>(&self.arch, theta, batch),
            Precision::Double => loss_grad::<f64>(&self.arch, theta, batch),
        })
    }

    /// Logits for each row of `features` (row-major), in `f64`.
    pub fn logits(&self, theta: &[f64], features: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_params(theta)?;
        let dim = self.arch.input_dim;
        if !features.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: features.len() % dim,
            });
        }
        Ok(match self.precision {
            Precision::Single => all_logits::<f32>(&self.arch, theta, features),
            Precision::Double => all_logits::<f64>(&self.arch, theta, features),
        })
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, theta: &[f64], features: &[f64]) -> Result<Vec<usize>> {
        Ok(self.logits(theta, features)?.iter().map(|row| argmax(row)).collect())
    }

    /// Fraction of rows whose prediction equals the label.
    pub fn accuracy(&self, theta: &[f64], batch: &Batch<'_>) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Domain("accuracy of an empty dataset".into()));
        }
        if batch.dim() != self.arch.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_dim,
                actual: batch.dim(),
            });
        }
        let predicted = self.predict(theta, batch.features())?;
        let correct = predicted.iter().zip(batch.labels()).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / batch.len() as f64)
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn mean_loss<T: Scalar>(arch: &ModelArch, theta: &[f64], batch: &Batch<'_>) -> f64 {
    let mut net = Net::<T>::new(arch, theta);
    let mut probs = vec![T::ZERO; arch.num_classes];
    let mut total = T::ZERO;
    for i in 0..batch.len() {
        net.forward(batch.row(i));
        total += net.cross_entropy(batch.labels()[i], &mut probs);
    }
    total.to_f64() / batch.len() as f64
}

fn loss_grad<T: Scalar>(arch: &ModelArch, theta: &[f64], batch: &Batch<'_>) -> (f64, Vec<f64>) {
    let mut net = Net::<T>::new(arch, theta);
    let mut grad = vec![T::ZERO; theta.len()];
    let mut probs = vec![T::ZERO; arch.num_classes];
    let mut total = T::ZERO;
    for i in 0..batch.len() {
        let label = batch.labels()[i];
        net.forward(batch.row(i));
        total += net.cross_entropy(label, &mut probs);
        let mut delta = probs.clone();
        delta[label] = delta[label] - T::of(1.0);
        net.backward(delta, &mut grad);
    }
    let scale = 1.0 / batch.len() as f64;
    (
        total.to_f64() * scale,
        grad.into_iter().map(|g| g.to_f64() * scale).collect(),
    )
}

fn all_logits<T: Scalar>(arch: &ModelArch, theta: &[f64], features: &[f64]) -> Vec<Vec<f64>> {
    let mut net = Net::<T>::new(arch, theta);
    features
        .chunks_exact(arch.input_dim)
        .map(|x| {
            net.forward(x);
            net.logits().iter().map(|z| z.to_f64()).collect()
        })
        .collect()
}
