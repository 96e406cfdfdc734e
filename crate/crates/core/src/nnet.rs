//! Linear probe and rectifier MLP with hand-written backward passes.
//!
//! Parameters are initialized uniformly in `[−1/√fan_in, 1/√fan_in]`,
//! weights row-major first and then the bias, layer by layer, from the
//! crate's seeded [`Rng`].

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::LabeledEmbeddings;
use crate::math::sqrt;
use crate::numerics::{argmax, axpy, check_len, dot, logsumexp, softmax, Matrix};
use crate::rng::Rng;
use crate::{Error, Result};

/// Affine map `x ↦ W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        check_len(weights.rows(), bias.len())?;
        crate::numerics::ensure_finite(&bias)?;
        Ok(Self { weights, bias })
    }

    pub fn init(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / sqrt(inputs as f64);
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.uniform(-bound, bound)).collect() };
        let weights = draw(inputs * outputs);
        let bias = draw(outputs);
        Self {
            weights: Matrix::new(outputs, inputs, weights).expect("sized buffer"),
            bias,
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Matrix::identity(dim),
            bias: vec![0.0; dim],
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Matrix::zeros(outputs, inputs),
            bias: vec![0.0; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weights.mul_vec(x)?;
        y.iter_mut().zip(&self.bias).for_each(|(a, b)| *a += b);
        Ok(y)
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// `self −= lr·(grad + decay·W)`; decay applies to weights only.
    fn descend(&mut self, grad: &Dense, lr: f64, weight_decay: f64) {
        for (w, g) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(grad.weights.as_slice())
        {
            *w -= lr * (g + weight_decay * *w);
        }
        axpy(-lr, &grad.bias, &mut self.bias);
    }

    fn accumulate_outer(&mut self, out_grad: &[f64], input: &[f64]) {
        for (i, &g) in out_grad.iter().enumerate() {
            if g != 0.0 {
                axpy(g, input, self.weights.row_mut(i));
            }
            self.bias[i] += g;
        }
    }

    fn scale(&mut self, s: f64) {
        self.weights.as_mut_slice().iter_mut().for_each(|w| *w *= s);
        self.bias.iter_mut().for_each(|b| *b *= s);
    }
}

/// Anything producing class logits whose input gradient can be taken.
pub trait Classifier {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn logits(&self, x: &[f64]) -> Result<Vec<f64>>;
    /// `∂(out_grad · logits(x)) / ∂x`.
    fn input_vjp(&self, x: &[f64], out_grad: &[f64]) -> Result<Vec<f64>>;
}

/// The classification head over `F_d`-dimensional features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub layer: Dense,
}

impl LinearProbe {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::SingleClass);
        }
        Ok(Self {
            layer: Dense::new(weights, bias)?,
        })
    }

    pub fn init(features: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            layer: Dense::init(features, classes, rng),
        }
    }

    pub fn weights(&self) -> &Matrix {
        &self.layer.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.layer.bias
    }
}

impl Classifier for LinearProbe {
    fn input_dim(&self) -> usize {
        self.layer.inputs()
    }

    fn num_classes(&self) -> usize {
        self.layer.outputs()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.layer.forward(x)
    }

    fn input_vjp(&self, x: &[f64], out_grad: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_dim(), x.len())?;
        self.layer.weights.mul_vec_transposed(out_grad)
    }
}

/// Gradients of a [`LinearProbe`], laid out like the probe itself.
pub type ProbeGrads = Dense;

/// Mean cross-entropy of `probe` on a labeled batch, plus
/// `(weight_decay/2)·‖W‖²`, with its exact gradient.
pub fn cross_entropy_grad(
    probe: &LinearProbe,
    features: &Matrix,
    labels: &[usize],
    weight_decay: f64,
) -> Result<(f64, ProbeGrads)> {
    check_len(features.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    let classes = probe.num_classes();
    let scale = 1.0 / labels.len() as f64;
    let mut grads = Dense::zeros(probe.input_dim(), classes);
    let mut loss = 0.0;
    for (x, &y) in features.iter_rows().zip(labels) {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        let logits = probe.logits(x)?;
        loss += logsumexp(&logits)? - logits[y];
        let mut g = softmax(&logits)?;
        g[y] -= 1.0;
        grads.accumulate_outer(&g, x);
    }
    grads.scale(scale);
    loss *= scale;
    if weight_decay > 0.0 {
        let w = probe.weights().as_slice();
        loss += 0.5 * weight_decay * dot(w, w);
        axpy(weight_decay, w, grads.weights.as_mut_slice());
    }
    Ok((loss, grads))
}

/// Convenience wrapper over [`cross_entropy_grad`] for a labeled dataset.
pub fn cross_entropy_grad_on(
    probe: &LinearProbe,
    batch: &LabeledEmbeddings,
    weight_decay: f64,
) -> Result<(f64, ProbeGrads)> {
    cross_entropy_grad(probe, batch.features(), batch.require_labels()?, weight_decay)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.5,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: LinearProbe,
    /// Mean minibatch loss of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Number of classes implied by a training set, rejecting single-class data.
pub(crate) fn training_classes(data: &LabeledEmbeddings) -> Result<usize> {
    let labels = data.require_labels()?;
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::SingleClass);
    }
    Ok(data.num_classes().unwrap_or(0))
}

/// Minibatch gradient descent on the cross-entropy of a fresh probe.
///
/// Features are consumed as given; the pipeline normalizes them first.
/// Each epoch draws one permutation of the rows from the seeded stream.
pub fn train_probe(data: &LabeledEmbeddings, cfg: &TrainConfig) -> Result<TrainedProbe> {
    cfg.validate()?;
    let classes = training_classes(data)?;
    let labels = data.require_labels()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let mut probe = LinearProbe::init(data.dim(), classes, &mut rng);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);

    let d = data.dim();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * d);
    let mut batch_y = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        let order = rng.permutation(data.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(data.row(i));
                batch_y.push(labels[i]);
            }
            let x = Matrix::new(chunk.len(), d, core::mem::take(&mut batch_x))?;
            let (loss, grads) = cross_entropy_grad(&probe, &x, &batch_y, cfg.weight_decay)?;
            batch_x = x.into_vec();
            // Weight decay is already inside the gradient.
            probe.layer.descend(&grads, cfg.learning_rate, 0.0);
            epoch_loss += loss;
            batches += 1;
        }
        loss_trace.push(epoch_loss / batches as f64);
    }
    Ok(TrainedProbe { probe, loss_trace })
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &LabeledEmbeddings) -> Result<f64> {
    let labels = data.require_labels()?;
    let mut correct = 0usize;
    for (x, &y) in data.features().iter_rows().zip(labels) {
        if argmax(&model.logits(x)?) == Some(y) {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Rectifier MLP; no activation after the last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

/// One gradient entry per layer, shaped like the layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<Dense>,
}

impl MlpGrads {
    pub fn zeros_like(m: &Mlp) -> Self {
        Self {
            layers: m
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &MlpGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, b.weights.as_slice(), a.weights.as_mut_slice());
            axpy(1.0, &b.bias, &mut a.bias);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.layers.iter_mut().for_each(|l| l.scale(s));
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("an MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            check_len(pair[0].outputs(), pair[1].inputs())?;
        }
        Ok(Self { layers })
    }

    /// Fresh network with the given widths, e.g. `[F_d, F_d, F_h]`.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::invalid("MLP widths need at least two positive entries"));
        }
        Self::from_layers(
            widths
                .windows(2)
                .map(|w| Dense::init(w[0], w[1], rng))
                .collect(),
        )
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            layers: vec![Dense::identity(dim)],
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        check_len(self.input_dim(), x.len())?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h)?;
            tape.inputs.push(h);
            h = if i < last {
                z.iter().map(|&v| relu(v)).collect()
            } else {
                z.clone()
            };
            tape.pre.push(z);
        }
        Ok((h, tape))
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Reverse pass for `out_grad · output`. The rectifier's derivative at
    /// exactly zero is taken as 0.
    pub fn backward(&self, tape: &Tape, out_grad: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        if tape.inputs.len() != self.layers.len() {
            return Err(Error::StaleTape);
        }
        for (layer, (inp, pre)) in self.layers.iter().zip(tape.inputs.iter().zip(&tape.pre)) {
            if inp.len() != layer.inputs() || pre.len() != layer.outputs() {
                return Err(Error::StaleTape);
            }
        }
        check_len(self.output_dim(), out_grad.len())?;

        let mut grads = MlpGrads::zeros_like(self);
        let mut g = out_grad.to_vec();
        let last = self.layers.len() - 1;
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (gi, &z) in g.iter_mut().zip(&tape.pre[i]) {
                    if z <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            grads.layers[i].accumulate_outer(&g, &tape.inputs[i]);
            g = self.layers[i].weights.mul_vec_transposed(&g)?;
        }
        Ok((grads, g))
    }

    pub fn descend(&mut self, grads: &MlpGrads, lr: f64, weight_decay: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            layer.descend(g, lr, weight_decay);
        }
    }
}

impl Classifier for Mlp {
    fn input_dim(&self) -> usize {
        Mlp::input_dim(self)
    }

    fn num_classes(&self) -> usize {
        self.output_dim()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.apply(x)
    }

    fn input_vjp(&self, x: &[f64], out_grad: &[f64]) -> Result<Vec<f64>> {
        let (_, tape) = self.forward(x)?;
        self.backward(&tape, out_grad).map(|(_, g)| g)
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}
