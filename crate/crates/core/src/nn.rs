//! Shared-encoder, multi-head dense networks with analytic gradients.
//!
//! Flat parameter layout (all row-major, `f64`):
//!
//! ```text
//! encoder layer 0: W0 [h0 x input_dim], b0 [h0]
//! encoder layer 1: W1 [h1 x h0],        b1 [h1]
//! ...
//! head for the smallest task id: W [out x h_last], b [out]
//! head for the next task id ...
//! ```
//!
//! `h_last` is `input_dim` when there are no hidden layers. Every branch
//! forked from a model shares this layout, so parameter vectors can be
//! combined coordinate-wise.

use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::metrics::{Metric, PerfValue};
use crate::numeric::{ParamVector, RngStream};
use crate::tasks::{DataSplit, Targets, TaskId};

pub type Batch = DataSplit;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    SoftmaxCrossEntropy,
    MeanSquaredError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadSpec {
    pub task_id: TaskId,
    pub output_dim: usize,
    pub loss: LossKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    input_dim: usize,
    hidden_dims: Vec<usize>,
    activation: Activation,
    heads: Vec<HeadSpec>,
}

#[derive(Debug, Clone, Copy)]
struct DenseLayout {
    in_dim: usize,
    out_dim: usize,
    offset: usize,
}

impl DenseLayout {
    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.in_dim * self.out_dim
    }

    fn bias(&self) -> Range<usize> {
        let start = self.offset + self.in_dim * self.out_dim;
        start..start + self.out_dim
    }

    fn len(&self) -> usize {
        (self.in_dim + 1) * self.out_dim
    }
}

impl ModelSpec {
    /// Heads are stored sorted by task id regardless of the order given.
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        mut heads: Vec<HeadSpec>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dims.contains(&0) {
            return Err(Error::invalid("model spec", "layer widths must be positive"));
        }
        if heads.is_empty() {
            return Err(Error::invalid("model spec", "at least one head is required"));
        }
        heads.sort_by_key(|h| h.task_id);
        if heads.windows(2).any(|w| w[0].task_id == w[1].task_id) {
            return Err(Error::invalid("model spec", "duplicate head task id"));
        }
        for h in &heads {
            if h.output_dim == 0 || (h.loss == LossKind::SoftmaxCrossEntropy && h.output_dim < 2) {
                return Err(Error::invalid(
                    "model spec",
                    alloc::format!("head {} has an invalid output dimension", h.task_id),
                ));
            }
        }
        Ok(ModelSpec {
            input_dim,
            hidden_dims,
            activation,
            heads,
        })
    }

    /// One softmax head with `n_classes` outputs per task `0..n_tasks`.
    pub fn classifier(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        activation: Activation,
        n_tasks: usize,
        n_classes: usize,
    ) -> Result<Self> {
        let heads = (0..n_tasks as u32)
            .map(|k| HeadSpec {
                task_id: TaskId(k),
                output_dim: n_classes,
                loss: LossKind::SoftmaxCrossEntropy,
            })
            .collect();
        Self::new(input_dim, hidden_dims, activation, heads)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.hidden_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    fn encoder_layers(&self) -> Vec<DenseLayout> {
        let mut layers = Vec::with_capacity(self.hidden_dims.len());
        let mut in_dim = self.input_dim;
        let mut offset = 0;
        for &out_dim in &self.hidden_dims {
            let l = DenseLayout {
                in_dim,
                out_dim,
                offset,
            };
            offset += l.len();
            layers.push(l);
            in_dim = out_dim;
        }
        layers
    }

    /// Number of parameters in the shared encoder (the prefix of the layout).
    pub fn shared_len(&self) -> usize {
        self.encoder_layers().iter().map(DenseLayout::len).sum()
    }

    fn head_layout(&self, task_id: TaskId) -> Result<(HeadSpec, DenseLayout)> {
        let mut offset = self.shared_len();
        let in_dim = self.feature_dim();
        for h in &self.heads {
            let l = DenseLayout {
                in_dim,
                out_dim: h.output_dim,
                offset,
            };
            if h.task_id == task_id {
                return Ok((*h, l));
            }
            offset += l.len();
        }
        Err(Error::UnknownTask(task_id))
    }

    pub fn head(&self, task_id: TaskId) -> Result<HeadSpec> {
        self.head_layout(task_id).map(|(h, _)| h)
    }

    /// Index range of `task_id`'s head block in the flat layout.
    pub fn head_range(&self, task_id: TaskId) -> Result<Range<usize>> {
        let (_, l) = self.head_layout(task_id)?;
        Ok(l.offset..l.offset + l.len())
    }

    pub fn param_count(&self) -> usize {
        let f = self.feature_dim();
        self.shared_len() + self.heads.iter().map(|h| (f + 1) * h.output_dim).sum::<usize>()
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        let mut p = alloc::vec![0.0; self.param_count()];
        let mut fill = |l: DenseLayout| {
            let bound = 1.0 / libm::sqrt(l.in_dim as f64);
            for w in &mut p[l.weights()] {
                *w = rng.uniform_in(-bound, bound);
            }
        };
        for l in self.encoder_layers() {
            fill(l);
        }
        for h in &self.heads {
            let (_, l) = self.head_layout(h.task_id).expect("head exists");
            fill(l);
        }
        ParamVector::from_vec_unchecked(p)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(())
    }

    /// Encoder activations for every layer, input first.
    fn forward_encoder(&self, p: &[f64], inputs: &[f64], rows: usize) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.hidden_dims.len() + 1);
        acts.push(inputs.to_vec());
        for l in self.encoder_layers() {
            let x = acts.last().expect("input layer");
            let y = dense_forward(p, &l, x, rows, Some(self.activation));
            acts.push(y);
        }
        acts
    }

    /// Raw head outputs, row-major `rows x output_dim`.
    pub fn logits(&self, params: &ParamVector, split: &DataSplit, task_id: TaskId) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_inputs(split)?;
        let (_, head) = self.head_layout(task_id)?;
        let p = params.as_slice();
        let acts = self.forward_encoder(p, split.inputs(), split.len());
        let feats = acts.last().expect("nonempty");
        Ok(dense_forward(p, &head, feats, split.len(), None))
    }

    fn check_inputs(&self, split: &DataSplit) -> Result<()> {
        if split.input_dim() != self.input_dim {
            return Err(Error::LengthMismatch {
                expected: self.input_dim,
                found: split.input_dim(),
            });
        }
        Ok(())
    }

    /// Mean loss over the batch and its exact gradient.
    ///
    /// The gradient covers the full layout; every head block other than
    /// `batch.task_id()`'s is exactly zero.
    pub fn loss_and_gradient(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.check_params(params)?;
        self.check_inputs(batch)?;
        let task = batch.task_id();
        let (head_spec, head) = self.head_layout(task)?;
        let rows = batch.len();
        if rows == 0 {
            return Err(Error::Empty("batch"));
        }
        let p = params.as_slice();
        let acts = self.forward_encoder(p, batch.inputs(), rows);
        let feats = acts.last().expect("nonempty");
        let logits = dense_forward(p, &head, feats, rows, None);

        let (loss, dlogits) = output_loss(head_spec, &logits, batch.targets(), rows)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(task));
        }

        let mut grad = alloc::vec![0.0; p.len()];
        let mut upstream = dense_backward(p, &head, feats, &dlogits, rows, &mut grad);
        let layers = self.encoder_layers();
        for (i, l) in layers.iter().enumerate().rev() {
            let out = &acts[i + 1];
            for (d, y) in upstream.iter_mut().zip(out) {
                *d *= self.activation.derivative_from_output(*y);
            }
            upstream = dense_backward(p, l, &acts[i], &upstream, rows, &mut grad);
        }
        let grad = ParamVector::from_vec(grad).map_err(|_| Error::NonFiniteLoss(task))?;
        Ok((loss, grad))
    }

    /// Accuracy (classification) or negative mean squared error (regression)
    /// of `task_id`'s head on every row of `split`. Higher is always better.
    pub fn evaluate(&self, params: &ParamVector, split: &DataSplit, task_id: TaskId) -> Result<PerfValue> {
        if split.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let head = self.head(task_id)?;
        let logits = self.logits(params, split, task_id)?;
        let out = head.output_dim;
        match (head.loss, split.targets()) {
            (LossKind::SoftmaxCrossEntropy, Targets::Labels { labels, .. }) => {
                let correct = logits
                    .chunks_exact(out)
                    .zip(labels)
                    .filter(|(z, &y)| argmax(z) == y)
                    .count();
                Ok(PerfValue::new(correct as f64 / labels.len() as f64, Metric::Accuracy))
            }
            (LossKind::MeanSquaredError, Targets::Values { values, dim }) if *dim == out => {
                let sse: f64 = logits.iter().zip(values).map(|(z, t)| (z - t) * (z - t)).sum();
                Ok(PerfValue::new(-sse / values.len() as f64, Metric::NegMse))
            }
            _ => Err(Error::invalid("evaluation", "split targets do not match the head")),
        }
    }

    /// Mean over rows of the largest softmax probability.
    pub fn mean_max_confidence(&self, params: &ParamVector, split: &DataSplit, task_id: TaskId) -> Result<f64> {
        let head = self.head(task_id)?;
        if head.loss != LossKind::SoftmaxCrossEntropy {
            return Err(Error::NotClassification(task_id));
        }
        if split.is_empty() {
            return Err(Error::Empty("evaluation split"));
        }
        let logits = self.logits(params, split, task_id)?;
        let total: f64 = logits
            .chunks_exact(head.output_dim)
            .map(|z| softmax(z).into_iter().fold(0.0, f64::max))
            .sum();
        Ok(total / split.len() as f64)
    }
}

/// `y = x W^T + b`, optionally followed by `act`.
fn dense_forward(p: &[f64], l: &DenseLayout, x: &[f64], rows: usize, act: Option<Activation>) -> Vec<f64> {
    let w = &p[l.weights()];
    let b = &p[l.bias()];
    let mut y = alloc::vec![0.0; rows * l.out_dim];
    for r in 0..rows {
        let xr = &x[r * l.in_dim..(r + 1) * l.in_dim];
        let yr = &mut y[r * l.out_dim..(r + 1) * l.out_dim];
        for (o, yo) in yr.iter_mut().enumerate() {
            let wo = &w[o * l.in_dim..(o + 1) * l.in_dim];
            let z = b[o] + crate::numeric::dot_slices(wo, xr);
            *yo = match act {
                Some(a) => a.apply(z),
                None => z,
            };
        }
    }
    y
}

/// Accumulates `dW = dy^T x`, `db = Σ dy` into `grad`; returns `dx = dy W`.
fn dense_backward(p: &[f64], l: &DenseLayout, x: &[f64], dy: &[f64], rows: usize, grad: &mut [f64]) -> Vec<f64> {
    let w = &p[l.weights()];
    let mut dx = alloc::vec![0.0; rows * l.in_dim];
    let (wr, br) = (l.weights(), l.bias());
    for r in 0..rows {
        let xr = &x[r * l.in_dim..(r + 1) * l.in_dim];
        let dyr = &dy[r * l.out_dim..(r + 1) * l.out_dim];
        let dxr = &mut dx[r * l.in_dim..(r + 1) * l.in_dim];
        for (o, &g) in dyr.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[br.start + o] += g;
            let gw = &mut grad[wr.start + o * l.in_dim..wr.start + (o + 1) * l.in_dim];
            for (gwi, xi) in gw.iter_mut().zip(xr) {
                *gwi += g * xi;
            }
            let wo = &w[o * l.in_dim..(o + 1) * l.in_dim];
            for (dxi, wi) in dxr.iter_mut().zip(wo) {
                *dxi += g * wi;
            }
        }
    }
    dx
}

/// Mean loss and its gradient with respect to the head outputs.
fn output_loss(head: HeadSpec, logits: &[f64], targets: &Targets, rows: usize) -> Result<(f64, Vec<f64>)> {
    let out = head.output_dim;
    let n = rows as f64;
    let mut d = alloc::vec![0.0; logits.len()];
    let mut total = 0.0;
    match (head.loss, targets) {
        (LossKind::SoftmaxCrossEntropy, Targets::Labels { labels, .. }) => {
            for (r, &y) in labels.iter().enumerate() {
                if y >= out {
                    return Err(Error::invalid("batch", "label outside the head's classes"));
                }
                let z = &logits[r * out..(r + 1) * out];
                let lse = log_sum_exp(z);
                total += lse - z[y];
                for (j, dj) in d[r * out..(r + 1) * out].iter_mut().enumerate() {
                    let pj = libm::exp(z[j] - lse);
                    *dj = (pj - if j == y { 1.0 } else { 0.0 }) / n;
                }
            }
        }
        (LossKind::MeanSquaredError, Targets::Values { values, dim }) if *dim == out => {
            let scale = out as f64;
            for (i, (z, t)) in logits.iter().zip(values).enumerate() {
                let e = z - t;
                total += e * e / scale;
                d[i] = 2.0 * e / (scale * n);
            }
        }
        _ => return Err(Error::invalid("batch", "targets do not match the head's loss")),
    }
    Ok((total / n, d))
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>())
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| libm::exp(v - lse)).collect()
}

/// Index of the largest entry; ties go to the smallest index.
fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

/// A model specification together with one set of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedHeadModel {
    pub spec: ModelSpec,
    pub params: ParamVector,
}

impl SharedHeadModel {
    pub fn init(spec: ModelSpec, rng: &mut RngStream) -> Self {
        let params = spec.init_params(rng);
        SharedHeadModel { spec, params }
    }

    pub fn with_params(spec: ModelSpec, params: ParamVector) -> Result<Self> {
        spec.check_params(&params)?;
        Ok(SharedHeadModel { spec, params })
    }

    pub fn loss_and_gradient(&self, batch: &Batch) -> Result<(f64, ParamVector)> {
        self.spec.loss_and_gradient(&self.params, batch)
    }

    pub fn evaluate(&self, split: &DataSplit, task_id: TaskId) -> Result<PerfValue> {
        self.spec.evaluate(&self.params, split, task_id)
    }

    pub fn mean_max_confidence(&self, split: &DataSplit, task_id: TaskId) -> Result<f64> {
        self.spec.mean_max_confidence(&self.params, split, task_id)
    }
}
